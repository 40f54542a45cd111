#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ncaswarm::train {

// Grid coordinate; y grows southwards so that North is (0, -1).
struct Cell {
  int x = 0;
  int y = 0;
  auto operator<=>(const Cell&) const = default;
};

inline constexpr std::array<Cell, 4> kDirectionOffsets = {{{0, -1}, {1, 0}, {0, 1}, {-1, 0}}};  // N, E, S, W

// Sorted, translated so that min x = min y = 0.
using Shape = std::vector<Cell>;

Shape normalize(Shape cells);
// Quarter turn clockwise on screen (North -> East), then normalized.
Shape rotate_quarter(const Shape& s);
// Lexicographically smallest of the four rotations.
Shape canonical_rotation(const Shape& s);
bool is_connected(const Shape& s);

// One-sided polyominoes (distinct up to translation and rotation) with
// exactly `size` cells, in canonical form, sorted.
std::vector<Shape> one_sided_polyominoes(int size);

struct ShapeClass {
  int label = 0;
  std::string name;
  Shape cells;
  std::vector<float> glyph;  // 5x5 RGB, row-major, 75 floats
};

struct Dataset {
  std::string name;
  std::vector<ShapeClass> classes;
  int grid_width = 0;
  int grid_height = 0;

  std::size_t class_count() const noexcept { return classes.size(); }
  // C x 75 glyph table in label order.
  std::vector<float> glyph_table() const;
};

// "digits", "digits-symmetric", "polyomino-4" or "polyomino-5".
Dataset make_dataset(const std::string& name);
const std::vector<std::string>& dataset_names();

nlohmann::json to_json(const Dataset& d);
Dataset dataset_from_json(const nlohmann::json& doc);

}  // namespace ncaswarm::train
