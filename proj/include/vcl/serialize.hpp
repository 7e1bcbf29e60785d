#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "vcl/tensor.hpp"

namespace vcl {

// Whitespace-separated text tokens; doubles as C99 hex floats.
void write_doubles(std::ostream& os, std::span<const double> values);
std::vector<double> read_doubles(std::istream& is, std::size_t count);
void write_tensor(std::ostream& os, const Tensor& t);  // rank, dims, values
Tensor read_tensor(std::istream& is);

std::string read_token(std::istream& is);
void expect_token(std::istream& is, const std::string& expected);
std::size_t read_size(std::istream& is);

}  // namespace vcl
