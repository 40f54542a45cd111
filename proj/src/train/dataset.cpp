#include "ncaswarm/train/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace ncaswarm::train {

namespace {

// 3x5 stand-ins for the digit shapes; every glyph is 4-connected.
constexpr std::array<const char*, 10> kDigitRows = {
    "###/#.#/#.#/#.#/###",  // 0
    ".#./##./.#./.#./###",  // 1
    "###/..#/###/#../###",  // 2
    "###/..#/###/..#/###",  // 3
    "#.#/#.#/###/..#/..#",  // 4
    "###/#../###/..#/###",  // 5
    "###/#../###/#.#/###",  // 6
    "###/..#/..#/..#/..#",  // 7
    "###/#.#/###/#.#/###",  // 8
    "###/#.#/###/..#/###",  // 9
};

Shape parse_bitmap(const char* rows) {
  Shape s;
  int x = 0, y = 0;
  for (const char* p = rows; *p; ++p) {
    if (*p == '/') {
      ++y;
      x = 0;
      continue;
    }
    if (*p == '#') s.push_back({x, y});
    ++x;
  }
  return normalize(std::move(s));
}

std::array<float, 3> hue_color(double h) {
  const double r = std::clamp(std::abs(h * 6.0 - 3.0) - 1.0, 0.0, 1.0);
  const double g = std::clamp(2.0 - std::abs(h * 6.0 - 2.0), 0.0, 1.0);
  const double b = std::clamp(2.0 - std::abs(h * 6.0 - 4.0), 0.0, 1.0);
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

// Draws the shape centred on the 5x5 LED raster.
std::vector<float> glyph_for(const Shape& s, int label, int classes) {
  std::vector<float> g(75, 0.0f);
  int w = 0, h = 0;
  for (auto c : s) {
    w = std::max(w, c.x + 1);
    h = std::max(h, c.y + 1);
  }
  const int ox = (5 - w) / 2, oy = (5 - h) / 2;
  const auto rgb = hue_color(static_cast<double>(label) / std::max(classes, 1));
  for (auto c : s) {
    const int x = c.x + ox, y = c.y + oy;
    if (x < 0 || x >= 5 || y < 0 || y >= 5) continue;
    for (int k = 0; k < 3; ++k) g[static_cast<std::size_t>((y * 5 + x) * 3 + k)] = rgb[static_cast<std::size_t>(k)];
  }
  return g;
}

Dataset digits(bool symmetric) {
  Dataset d;
  d.name = symmetric ? "digits-symmetric" : "digits";
  d.grid_width = d.grid_height = 11;
  const int count = symmetric ? 9 : 10;
  for (int i = 0; i < count; ++i) {
    const auto s = parse_bitmap(kDigitRows[static_cast<std::size_t>(i)]);
    d.classes.push_back({i, std::to_string(i), s, glyph_for(s, i, count)});
  }
  return d;
}

Dataset polyominoes(int max_size) {
  Dataset d;
  d.name = "polyomino-" + std::to_string(max_size);
  d.grid_width = d.grid_height = 7;
  std::vector<Shape> all;
  for (int n = 1; n <= max_size; ++n) {
    auto shapes = one_sided_polyominoes(n);
    all.insert(all.end(), shapes.begin(), shapes.end());
  }
  const int count = static_cast<int>(all.size());
  for (int i = 0; i < count; ++i) {
    const auto& s = all[static_cast<std::size_t>(i)];
    d.classes.push_back({i, "p" + std::to_string(s.size()) + "_" + std::to_string(i), s, glyph_for(s, i, count)});
  }
  return d;
}

}  // namespace

Shape normalize(Shape cells) {
  if (cells.empty()) return cells;
  int mx = cells[0].x, my = cells[0].y;
  for (auto c : cells) {
    mx = std::min(mx, c.x);
    my = std::min(my, c.y);
  }
  for (auto& c : cells) c = {c.x - mx, c.y - my};
  std::sort(cells.begin(), cells.end());
  return cells;
}

Shape rotate_quarter(const Shape& s) {
  Shape r;
  r.reserve(s.size());
  for (auto c : s) r.push_back({-c.y, c.x});
  return normalize(std::move(r));
}

Shape canonical_rotation(const Shape& s) {
  Shape best = normalize(s), cur = best;
  for (int i = 0; i < 3; ++i) {
    cur = rotate_quarter(cur);
    best = std::min(best, cur);
  }
  return best;
}

bool is_connected(const Shape& s) {
  if (s.empty()) return false;
  std::set<Cell> remaining(s.begin(), s.end());
  std::vector<Cell> stack{s.front()};
  remaining.erase(s.front());
  while (!stack.empty()) {
    const auto c = stack.back();
    stack.pop_back();
    for (auto d : kDirectionOffsets) {
      const Cell n{c.x + d.x, c.y + d.y};
      if (remaining.erase(n)) stack.push_back(n);
    }
  }
  return remaining.empty();
}

std::vector<Shape> one_sided_polyominoes(int size) {
  if (size < 1) return {};
  // Grow fixed polyominoes one cell at a time, then fold rotations.
  std::set<Shape> fixed{Shape{{0, 0}}};
  for (int n = 1; n < size; ++n) {
    std::set<Shape> next;
    for (const auto& s : fixed) {
      const std::set<Cell> occupied(s.begin(), s.end());
      for (auto c : s) {
        for (auto d : kDirectionOffsets) {
          const Cell n2{c.x + d.x, c.y + d.y};
          if (occupied.count(n2)) continue;
          Shape grown = s;
          grown.push_back(n2);
          next.insert(normalize(std::move(grown)));
        }
      }
    }
    fixed = std::move(next);
  }
  std::set<Shape> one_sided;
  for (const auto& s : fixed) one_sided.insert(canonical_rotation(s));
  return {one_sided.begin(), one_sided.end()};
}

std::vector<float> Dataset::glyph_table() const {
  std::vector<float> t;
  t.reserve(classes.size() * 75);
  for (const auto& c : classes) t.insert(t.end(), c.glyph.begin(), c.glyph.end());
  return t;
}

const std::vector<std::string>& dataset_names() {
  static const std::vector<std::string> names = {"digits", "digits-symmetric", "polyomino-4", "polyomino-5"};
  return names;
}

Dataset make_dataset(const std::string& name) {
  if (name == "digits") return digits(false);
  if (name == "digits-symmetric") return digits(true);
  if (name == "polyomino-4") return polyominoes(4);
  if (name == "polyomino-5") return polyominoes(5);
  throw std::invalid_argument("unknown dataset '" + name + "'");
}

nlohmann::json to_json(const Dataset& d) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : d.classes) {
    nlohmann::json cells = nlohmann::json::array();
    for (auto cell : c.cells) cells.push_back({cell.x, cell.y});
    classes.push_back({{"label", c.label}, {"name", c.name}, {"cells", cells}, {"glyph", c.glyph}});
  }
  return {{"name", d.name}, {"grid", {d.grid_width, d.grid_height}}, {"classes", classes}};
}

Dataset dataset_from_json(const nlohmann::json& doc) {
  Dataset d;
  d.name = doc.at("name").get<std::string>();
  if (doc.contains("grid")) {
    d.grid_width = doc["grid"].at(0).get<int>();
    d.grid_height = doc["grid"].at(1).get<int>();
  }
  int w = 0, h = 0;
  for (const auto& c : doc.at("classes")) {
    ShapeClass sc;
    sc.label = c.at("label").get<int>();
    sc.name = c.value("name", std::to_string(sc.label));
    for (const auto& cell : c.at("cells")) sc.cells.push_back({cell.at(0).get<int>(), cell.at(1).get<int>()});
    sc.cells = normalize(std::move(sc.cells));
    sc.glyph = c.at("glyph").get<std::vector<float>>();
    if (sc.glyph.size() != 75) throw std::invalid_argument("glyph must have 75 values");
    if (sc.label != static_cast<int>(d.classes.size())) throw std::invalid_argument("labels must be 0..C-1 in order");
    for (auto cell : sc.cells) {
      w = std::max(w, cell.x + 1);
      h = std::max(h, cell.y + 1);
    }
    d.classes.push_back(std::move(sc));
  }
  if (d.grid_width == 0) {
    d.grid_width = w + 2;
    d.grid_height = h + 2;
  }
  return d;
}

}  // namespace ncaswarm::train
