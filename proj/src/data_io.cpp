#include "vcl/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "vcl/error.hpp"
#include "vcl/random.hpp"

namespace vcl {

void Dataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset '" + name + "' is empty");
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw ShapeError("dataset '" + name + "': feature rows do not match label count");
  }
  for (int l : labels) {
    if (l < 0 || l >= class_count) throw std::invalid_argument("dataset '" + name + "': label out of range");
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.name = name;
  out.class_count = class_count;
  out.image = image;
  out.features = Tensor::matrix(rows.size(), dim());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = features.row(rows.at(i));
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << content;
  out.flush();
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

Dataset parse_cifar10_bytes(const std::vector<std::uint8_t>& bytes, std::size_t max_records, std::string name) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kCifarRecordBytes;
    throw FormatError("truncated CIFAR-10 record at byte offset " + std::to_string(offset) + " (file length " +
                      std::to_string(bytes.size()) + " is not a multiple of 3073)");
  }
  const std::size_t n = std::min(bytes.size() / kCifarRecordBytes, max_records);
  Dataset ds;
  ds.name = std::move(name);
  ds.class_count = 10;
  ds.image = ImageShape{3, 32, 32};
  ds.features = Tensor::matrix(n, kCifarPixels);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * kCifarRecordBytes;
    const int label = bytes[off];
    if (label > 9) {
      throw FormatError("corrupt CIFAR-10 record " + std::to_string(i) + " at byte offset " +
                        std::to_string(off) + ": label byte " + std::to_string(label));
    }
    ds.labels[i] = label;
    auto row = ds.features.row(i);
    for (std::size_t p = 0; p < kCifarPixels; ++p) row[p] = bytes[off + 1 + p] / 255.0;
  }
  return ds;
}

Dataset load_cifar10_bin(const std::string& path, std::size_t max_records) {
  const std::string raw = read_file(path);
  std::vector<std::uint8_t> bytes(raw.begin(), raw.end());
  return parse_cifar10_bytes(bytes, max_records, path);
}

Dataset gen_gaussian_mixture(const MixtureSpec& spec) {
  if (spec.classes <= 0 || spec.per_class == 0 || spec.dim == 0) {
    throw std::invalid_argument("gen_gaussian_mixture: counts must be positive");
  }
  if (spec.noise < 0.0) throw std::invalid_argument("gen_gaussian_mixture: noise must be >= 0");
  const auto classes = static_cast<std::size_t>(spec.classes);
  if (spec.orthogonal && spec.dim < classes) {
    throw std::invalid_argument("gen_gaussian_mixture: orthogonal means need dim >= classes");
  }
  Prng root(spec.seed);
  Prng means_rng = root.split(1);
  if (spec.noise_stream == 1) throw std::invalid_argument("gen_gaussian_mixture: noise stream 1 is reserved");
  Prng noise_rng = root.split(spec.noise_stream);

  std::vector<std::vector<double>> dirs;
  for (std::size_t c = 0; c < classes; ++c) {
    for (;;) {
      std::vector<double> v(spec.dim);
      for (auto& x : v) x = means_rng.normal();
      if (spec.orthogonal) {
        for (const auto& u : dirs) {
          const double p = dot(v, u);
          for (std::size_t j = 0; j < v.size(); ++j) v[j] -= p * u[j];
        }
      }
      if (l2_norm(v) > 1e-6) {
        dirs.push_back(l2_normalize(v));
        break;
      }
    }
  }

  Dataset ds;
  ds.name = "gaussian_mixture";
  ds.class_count = spec.classes;
  const std::size_t n = classes * spec.per_class;
  ds.features = Tensor::matrix(n, spec.dim);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    ds.labels[i] = static_cast<int>(c);
    auto row = ds.features.row(i);
    for (std::size_t j = 0; j < spec.dim; ++j) row[j] = spec.separation * dirs[c][j] + spec.noise * noise_rng.normal();
  }
  return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t b = 0;
    while (b < cell.size() && cell[b] == ' ') ++b;
    out.push_back(cell.substr(b));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, std::size_t row, std::size_t col) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end == cell.c_str() || *end != '\0' || !std::isfinite(v)) {
    throw FormatError("non-numeric cell '" + cell + "' at data row " + std::to_string(row) + ", column " +
                      std::to_string(col));
  }
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw FormatError("ragged CSV: data row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(t.header.size()));
    }
    std::vector<double> vals;
    for (std::size_t c = 0; c < cells.size(); ++c) vals.push_back(parse_cell(cells[c], row, c));
    t.rows.push_back(std::move(vals));
    ++row;
  }
  if (!have_header) throw FormatError("CSV has no header row");
  return t;
}

}  // namespace

Dataset load_csv_dataset(const std::string& path, const std::string& label_column) {
  CsvTable t = parse_csv(read_file(path));
  auto it = std::find(t.header.begin(), t.header.end(), label_column);
  if (it == t.header.end()) throw FormatError("CSV has no column named '" + label_column + "'");
  const std::size_t lc = static_cast<std::size_t>(it - t.header.begin());
  if (t.rows.empty()) throw FormatError("CSV has no data rows");
  Dataset ds;
  ds.name = path;
  ds.features = Tensor::matrix(t.rows.size(), t.header.size() - 1);
  int max_label = -1;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const double lv = t.rows[r][lc];
    if (lv < 0 || lv != std::floor(lv)) {
      throw FormatError("label at data row " + std::to_string(r) + " is not a non-negative integer");
    }
    const int label = static_cast<int>(lv);
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
    std::size_t out_c = 0;
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      if (c != lc) ds.features.at(r, out_c++) = t.rows[r][c];
    }
  }
  ds.class_count = max_label + 1;
  return ds;
}

std::string csv_dataset_text(const Dataset& data) {
  std::ostringstream os;
  for (std::size_t j = 0; j < data.dim(); ++j) os << 'f' << j << ',';
  os << "label\n";
  os.precision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.features.row(i)) os << v << ',';
    os << data.labels[i] << '\n';
  }
  return os.str();
}

void write_csv_dataset(const std::string& path, const Dataset& data) { write_file(path, csv_dataset_text(data)); }

SoftLabelSet parse_soft_labels(const std::string& text) {
  CsvTable t = parse_csv(text);
  SoftLabelSet out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    auto row = t.rows[r];
    double s = 0.0;
    for (double p : row) {
      if (p < 0.0) throw FormatError("negative probability in soft-label row " + std::to_string(r));
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-3) {
      throw FormatError("soft-label row " + std::to_string(r) + " sums to " + std::to_string(s) +
                        ", cannot normalise");
    }
    for (auto& p : row) p /= s;
    out.rows.push_back(std::move(row));
  }
  return out;
}

SoftLabelSet load_soft_labels(const std::string& path) { return parse_soft_labels(read_file(path)); }

void write_metrics_jsonl(const std::vector<nlohmann::json>& records, const std::string& path, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open metrics file '" + path + "'");
  for (const auto& r : records) out << r.dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("write to metrics file '" + path + "' failed");
}

std::vector<nlohmann::json> read_metrics_jsonl(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace vcl
