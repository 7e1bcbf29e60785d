#include "vcl/serialize.hpp"

#include <cerrno>
#include <cstdlib>
#include <istream>
#include <ostream>

#include "vcl/error.hpp"

namespace vcl {

void write_doubles(std::ostream& os, std::span<const double> values) {
  const auto flags = os.flags();
  os << std::hexfloat;
  for (std::size_t i = 0; i < values.size(); ++i) {
    os << (i ? " " : "") << values[i];
  }
  os << '\n';
  os.flags(flags);
}

std::string read_token(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw FormatError("unexpected end of input");
  return tok;
}

void expect_token(std::istream& is, const std::string& expected) {
  const std::string tok = read_token(is);
  if (tok != expected) throw FormatError("expected '" + expected + "', found '" + tok + "'");
}

std::size_t read_size(std::istream& is) {
  const std::string tok = read_token(is);
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(tok.c_str(), &end, 10);
  if (errno != 0 || end == tok.c_str() || *end != '\0' || tok.front() == '-') {
    throw FormatError("expected a non-negative integer, found '" + tok + "'");
  }
  return static_cast<std::size_t>(v);
}

std::vector<double> read_doubles(std::istream& is, std::size_t count) {
  std::vector<double> out(count);
  for (auto& v : out) {
    const std::string tok = read_token(is);
    char* end = nullptr;
    v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw FormatError("expected a number, found '" + tok + "'");
  }
  return out;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os << t.rank();
  for (auto s : t.shape()) os << ' ' << s;
  os << '\n';
  write_doubles(os, t.data());
}

Tensor read_tensor(std::istream& is) {
  const std::size_t rank = read_size(is);
  std::vector<std::size_t> shape(rank);
  for (auto& s : shape) s = read_size(is);
  return Tensor(shape, read_doubles(is, shape_product(shape)));
}

}  // namespace vcl
