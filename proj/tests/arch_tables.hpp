#pragma once

#include <cstddef>
#include <vector>

namespace arch {

struct Row {
  int id;
  std::size_t channels;
  std::size_t size;
};

// Output feature maps and spatial size of every layer at 256x256, with n
// input planes. Row 1 is the input itself.
std::vector<Row> mri_table(std::size_t n) {
  return {{1, n, 256},   {2, 48, 256},   {3, 48, 256},   {4, 48, 128},  {5, 48, 128},  {6, 48, 64},
          {7, 48, 64},   {8, 48, 32},    {9, 48, 32},    {10, 48, 16},  {11, 48, 16},  {12, 48, 8},
          {13, 48, 8},   {14, 48, 16},   {15, 96, 16},   {16, 96, 16},  {17, 96, 16},  {18, 96, 32},
          {19, 144, 32}, {20, 96, 32},   {21, 96, 32},   {22, 96, 64},  {23, 144, 64}, {24, 96, 64},
          {25, 96, 64},  {26, 96, 128},  {27, 144, 128}, {28, 96, 128}, {29, 96, 128}, {30, 96, 256},
          {31, 96 + n, 256}, {32, 64, 256}, {33, 32, 256}, {34, 1, 256}};
}

std::vector<Row> microscopy_table(std::size_t n) {
  return {{1, n, 256},   {2, 32, 256},  {3, 32, 256},  {4, 32, 128},  {5, 64, 128},
          {6, 64, 128},  {7, 64, 64},   {8, 128, 64},  {9, 64, 64},   {10, 64, 128},
          {11, 128, 128}, {12, 64, 128}, {13, 32, 128}, {14, 32, 256}, {15, 64, 256},
          {16, 32, 256}, {17, 32, 256}, {18, 1, 256},  {19, 1, 256}};
}

}  // namespace arch
