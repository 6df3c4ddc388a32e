#include "nep/scene.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <sstream>

#include "nep/error.hpp"

namespace nep::scene {

using nlohmann::json;

namespace {

constexpr std::array<const char*, kShapeCount> kShapeNames = {"square", "circle", "bar"};
constexpr std::array<const char*, kColorCount> kColorNames = {"red",  "green",   "blue",   "yellow",
                                                              "cyan", "magenta", "orange", "purple"};
constexpr std::array<const char*, kBackgroundCount> kBackgroundNames = {"black", "gray", "white"};
constexpr std::array<Rgb, kColorCount> kColorRgb = {{{255, 0, 0},
                                                     {0, 255, 0},
                                                     {0, 0, 255},
                                                     {255, 255, 0},
                                                     {0, 255, 255},
                                                     {255, 0, 255},
                                                     {255, 170, 0},
                                                     {170, 0, 255}}};
constexpr std::array<Rgb, kBackgroundCount> kBackgroundRgb = {{{0, 0, 0}, {85, 85, 85}, {255, 255, 255}}};

template <class E, std::size_t N>
std::optional<E> lookup(const std::array<const char*, N>& names, const std::string& s) {
  for (std::size_t i = 0; i < N; ++i)
    if (s == names[i]) return E(i);
  return std::nullopt;
}

std::vector<int> sizes_for(Shape s) {
  switch (s) {
    case Shape::Square: return {2, 3};
    case Shape::Circle: return {3, 4};
    case Shape::Bar: return {3, 4};
  }
  return {2};
}

int height_of(const SceneObject& o) { return o.shape == Shape::Bar ? 1 : o.size; }

int palette_index(Rgb c, const TokenizerConfig& cfg) {
  for (std::size_t i = 0; i < cfg.palette.size(); ++i)
    if (cfg.palette[i] == c) return int(i);
  fail(ErrorKind::Config, "scene color missing from tokenizer palette");
}

}  // namespace

const char* name(Shape s) { return kShapeNames[std::size_t(s)]; }
const char* name(Color c) { return kColorNames[std::size_t(c)]; }
const char* name(Background b) { return kBackgroundNames[std::size_t(b)]; }
const char* name(VPos v) { return v == VPos::Top ? "top" : "bottom"; }
const char* name(HPos h) { return h == HPos::Left ? "left" : "right"; }
const char* name(EditOp op) {
  static constexpr const char* kOps[] = {"recolor", "add", "remove", "replace"};
  return kOps[int(op)];
}

Rgb rgb(Color c) { return kColorRgb[std::size_t(c)]; }
Rgb rgb(Background b) { return kBackgroundRgb[std::size_t(b)]; }

std::optional<Color> color_of_rgb(Rgb c) {
  for (std::size_t i = 0; i < kColorRgb.size(); ++i)
    if (kColorRgb[i] == c) return Color(i);
  return std::nullopt;
}

std::vector<Cell> SceneObject::footprint() const {
  std::vector<Cell> cells;
  const int h = height_of(*this);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < size; ++c) {
      if (shape == Shape::Circle) {
        const bool corner = (r == 0 || r == h - 1) && (c == 0 || c == size - 1);
        if (corner) continue;
      }
      cells.push_back({row + r, col + c});
    }
  return cells;
}

// Doubled center coordinate compared against the grid extent; the midline goes
// to bottom/right.
VPos SceneObject::vpos(int grid_rows) const { return 2 * row + height_of(*this) < grid_rows ? VPos::Top : VPos::Bottom; }
HPos SceneObject::hpos(int grid_cols) const { return 2 * col + size < grid_cols ? HPos::Left : HPos::Right; }

json to_json(const SceneSpec& s) {
  json objs = json::array();
  for (const auto& o : s.objects)
    objs.push_back({{"shape", name(o.shape)}, {"color", name(o.color)}, {"row", o.row}, {"col", o.col}, {"size", o.size}});
  return json{{"background", name(s.background)}, {"rows", s.rows}, {"cols", s.cols}, {"objects", objs}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  auto bg = lookup<Background>(kBackgroundNames, j.at("background").get<std::string>());
  require(bg.has_value(), ErrorKind::Input, "scene: unknown background");
  s.background = *bg;
  s.rows = j.value("rows", 8);
  s.cols = j.value("cols", 8);
  for (const auto& o : j.at("objects")) {
    SceneObject ob;
    auto sh = lookup<Shape>(kShapeNames, o.at("shape").get<std::string>());
    auto co = lookup<Color>(kColorNames, o.at("color").get<std::string>());
    require(sh && co, ErrorKind::Input, "scene: unknown shape or color");
    ob.shape = *sh;
    ob.color = *co;
    ob.row = o.at("row");
    ob.col = o.at("col");
    ob.size = o.at("size");
    s.objects.push_back(ob);
  }
  return s;
}

bool valid(const SceneSpec& s) {
  std::vector<int> owner(std::size_t(s.rows * s.cols), -1);
  std::vector<bool> used_color(kColorCount, false);
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    if (used_color[std::size_t(o.color)]) return false;
    used_color[std::size_t(o.color)] = true;
    for (const auto& c : o.footprint()) {
      if (c.row < 0 || c.col < 0 || c.row >= s.rows || c.col >= s.cols) return false;
      // The cell and its 8 neighbours must not belong to another object.
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int r = c.row + dr, cc = c.col + dc;
          if (r < 0 || cc < 0 || r >= s.rows || cc >= s.cols) continue;
          const int o2 = owner[std::size_t(r * s.cols + cc)];
          if (o2 >= 0 && o2 != int(i)) return false;
        }
      owner[std::size_t(c.row * s.cols + c.col)] = int(i);
    }
  }
  return true;
}

TokenGrid render_grid(const SceneSpec& s, const TokenizerConfig& cfg) {
  require(std::size_t(s.rows) == cfg.rows() && std::size_t(s.cols) == cfg.cols(), ErrorKind::Config,
          "scene grid does not match tokenizer grid");
  TokenGrid g{std::vector<int>(cfg.grid_len(), palette_index(rgb(s.background), cfg)), cfg.rows(), cfg.cols()};
  for (const auto& o : s.objects) {
    const int id = palette_index(rgb(o.color), cfg);
    for (const auto& c : o.footprint())
      if (c.row >= 0 && c.col >= 0 && c.row < s.rows && c.col < s.cols)
        g.ids[std::size_t(c.row * s.cols + c.col)] = id;
  }
  return g;
}

Image render(const SceneSpec& s, const TokenizerConfig& cfg) { return decode_tokens(render_grid(s, cfg), cfg); }

namespace {

bool on_midline(const SceneObject& o, int rows, int cols) {
  return 2 * o.row + height_of(o) == rows || 2 * o.col + o.size == cols;
}

std::optional<SceneObject> place_object(Rng& rng, const SceneSpec& s, Color color, std::optional<Shape> shape) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    SceneObject o;
    o.shape = shape ? *shape : Shape(rng.below(kShapeCount));
    const auto sizes = sizes_for(o.shape);
    o.size = sizes[rng.below(sizes.size())];
    o.color = color;
    const int h = height_of(o);
    o.row = int(rng.below(std::uint64_t(s.rows - h + 1)));
    o.col = int(rng.below(std::uint64_t(s.cols - o.size + 1)));
    if (on_midline(o, s.rows, s.cols)) continue;
    SceneSpec trial = s;
    trial.objects.push_back(o);
    if (valid(trial)) return o;
  }
  return std::nullopt;
}

std::vector<Color> unused_colors(const SceneSpec& s) {
  std::vector<Color> out;
  for (int c = 0; c < kColorCount; ++c) {
    bool used = false;
    for (const auto& o : s.objects) used = used || o.color == Color(c);
    if (!used) out.push_back(Color(c));
  }
  return out;
}

}  // namespace

SceneSpec random_scene(Rng& rng, int rows, int cols, int min_objects, int max_objects) {
  for (;;) {
    SceneSpec s;
    s.rows = rows;
    s.cols = cols;
    s.background = Background(rng.below(kBackgroundCount));
    const int n = min_objects + int(rng.below(std::uint64_t(max_objects - min_objects + 1)));
    std::vector<int> colors(kColorCount);
    for (int i = 0; i < kColorCount; ++i) colors[std::size_t(i)] = i;
    rng.shuffle(colors.begin(), colors.end());
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      auto o = place_object(rng, s, Color(colors[std::size_t(i)]), std::nullopt);
      if (o)
        s.objects.push_back(*o);
      else
        ok = false;
    }
    if (ok) return s;
  }
}

std::string caption(const SceneSpec& s) {
  std::ostringstream out;
  if (s.objects.empty()) {
    out << name(s.background) << " background";
    return out.str();
  }
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    if (i) out << " and ";
    out << name(o.color) << ' ' << name(o.shape) << ' ' << name(o.vpos(s.rows)) << ' ' << name(o.hpos(s.cols));
  }
  out << " on " << name(s.background);
  return out.str();
}

CaptionFacts facts_of(const SceneSpec& s) {
  CaptionFacts f;
  f.background = s.background;
  for (const auto& o : s.objects) f.objects.push_back({o.color, o.shape, o.vpos(s.rows), o.hpos(s.cols)});
  return f;
}

std::optional<CaptionFacts> parse_caption(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> w;
  for (std::string t; in >> t;) w.push_back(t);
  CaptionFacts f;
  if (w.size() == 2 && w[1] == "background") {
    auto bg = lookup<Background>(kBackgroundNames, w[0]);
    if (!bg) return std::nullopt;
    f.background = *bg;
    return f;
  }
  std::size_t i = 0;
  for (;;) {
    if (i + 4 > w.size()) return std::nullopt;
    auto c = lookup<Color>(kColorNames, w[i]);
    auto s = lookup<Shape>(kShapeNames, w[i + 1]);
    if (!c || !s) return std::nullopt;
    const std::string& v = w[i + 2];
    const std::string& h = w[i + 3];
    if ((v != "top" && v != "bottom") || (h != "left" && h != "right")) return std::nullopt;
    f.objects.push_back({*c, *s, v == "top" ? VPos::Top : VPos::Bottom, h == "left" ? HPos::Left : HPos::Right});
    i += 4;
    if (i < w.size() && w[i] == "and") {
      ++i;
      continue;
    }
    break;
  }
  if (i + 2 != w.size() || w[i] != "on") return std::nullopt;
  auto bg = lookup<Background>(kBackgroundNames, w[i + 1]);
  if (!bg) return std::nullopt;
  f.background = *bg;
  return f;
}

Analysis analyze(const TokenGrid& grid, const TokenizerConfig& cfg) {
  const int rows = int(grid.rows), cols = int(grid.cols);
  Analysis a;
  std::map<int, int> freq;
  for (int id : grid.ids) ++freq[id];
  int best = -1;
  for (const auto& [id, n] : freq)
    if (n > best) {
      best = n;
      a.background_id = id;
    }
  for (int b = 0; b < kBackgroundCount; ++b)
    if (cfg.palette.at(std::size_t(a.background_id)) == rgb(Background(b))) a.background = Background(b);

  std::vector<char> seen(grid.ids.size(), 0);
  for (int start = 0; start < rows * cols; ++start) {
    if (seen[std::size_t(start)] || grid.ids[std::size_t(start)] == a.background_id) continue;
    DetectedObject obj;
    obj.palette_id = grid.ids[std::size_t(start)];
    std::vector<int> stack{start};
    seen[std::size_t(start)] = 1;
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      const int r = cur / cols, c = cur % cols;
      obj.cells.push_back({r, c});
      const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= rows || n[1] >= cols) continue;
        const int k = n[0] * cols + n[1];
        if (!seen[std::size_t(k)] && grid.ids[std::size_t(k)] == obj.palette_id) {
          seen[std::size_t(k)] = 1;
          stack.push_back(k);
        }
      }
    }
    obj.color = color_of_rgb(cfg.palette.at(std::size_t(obj.palette_id)));
    int r0 = rows, r1 = -1, c0 = cols, c1 = -1;
    for (const auto& c : obj.cells) {
      r0 = std::min(r0, c.row);
      r1 = std::max(r1, c.row);
      c0 = std::min(c0, c.col);
      c1 = std::max(c1, c.col);
    }
    const int h = r1 - r0 + 1, w = c1 - c0 + 1;
    const auto n = int(obj.cells.size());
    if (h == w && n == h * w && h >= 2)
      obj.shape = Shape::Square;
    else if (h == w && h >= 3 && n == h * w - 4) {
      SceneObject probe{Shape::Circle, Color::Red, r0, c0, w};
      auto fp = probe.footprint();
      bool same = true;
      for (const auto& c : fp)
        same = same && grid.ids[std::size_t(c.row * cols + c.col)] == obj.palette_id;
      if (same) obj.shape = Shape::Circle;
    } else if (h == 1 && w >= 3)
      obj.shape = Shape::Bar;
    obj.vpos = r0 + r1 + 1 < rows ? VPos::Top : VPos::Bottom;
    obj.hpos = c0 + c1 + 1 < cols ? HPos::Left : HPos::Right;
    a.objects.push_back(std::move(obj));
  }
  return a;
}

double scene_match_score(const TokenGrid& grid, const CaptionFacts& facts, const TokenizerConfig& cfg) {
  const Analysis a = analyze(grid, cfg);
  std::vector<bool> used(a.objects.size(), false);
  int hits = 0;
  for (const auto& f : facts.objects) {
    for (std::size_t k = 0; k < a.objects.size(); ++k) {
      const auto& o = a.objects[k];
      if (!used[k] && o.color == f.color && o.shape == f.shape && o.vpos == f.vpos && o.hpos == f.hpos) {
        used[k] = true;
        ++hits;
        break;
      }
    }
  }
  const bool clean = std::all_of(used.begin(), used.end(), [](bool u) { return u; });
  if (a.background == facts.background && clean) ++hits;
  return double(hits) / double(facts.objects.size() + 1);
}

namespace {

std::vector<std::uint8_t> footprint_mask(const std::vector<const SceneObject*>& objs, int rows, int cols) {
  std::vector<std::uint8_t> m(std::size_t(rows * cols), 0);
  for (const auto* o : objs)
    for (const auto& c : o->footprint()) m[std::size_t(c.row * cols + c.col)] = 1;
  return m;
}

std::optional<EditTriple> try_edit(Rng& rng, EditOp op, int rows, int cols) {
  EditTriple t;
  t.op = op;
  const bool needs_object = op != EditOp::Add;
  t.source = random_scene(rng, rows, cols, needs_object ? 1 : 0, needs_object ? 3 : 2);
  t.target = t.source;
  const std::size_t pick = t.source.objects.empty() ? 0 : rng.below(t.source.objects.size());
  switch (op) {
    case EditOp::Recolor: {
      auto& obj = t.target.objects[pick];
      const auto free = unused_colors(t.source);
      const Color to = free[rng.below(free.size())];
      t.instruction = std::string("make the ") + name(obj.color) + " " + name(obj.shape) + " " + name(to);
      obj.color = to;
      t.patch_mask = footprint_mask({&obj}, rows, cols);
      return t;
    }
    case EditOp::Remove: {
      const auto obj = t.source.objects[pick];
      t.instruction = std::string("remove the ") + name(obj.color) + " " + name(obj.shape);
      t.target.objects.erase(t.target.objects.begin() + std::ptrdiff_t(pick));
      t.patch_mask = footprint_mask({&obj}, rows, cols);
      return t;
    }
    case EditOp::Add: {
      const auto free = unused_colors(t.source);
      auto obj = place_object(rng, t.source, free[rng.below(free.size())], std::nullopt);
      if (!obj) return std::nullopt;
      t.target.objects.push_back(*obj);
      t.instruction = std::string("add a ") + name(obj->color) + " " + name(obj->shape) + " " +
                      name(obj->vpos(rows)) + " " + name(obj->hpos(cols));
      t.patch_mask = footprint_mask({&*obj}, rows, cols);
      return t;
    }
    case EditOp::Replace: {
      const auto old = t.source.objects[pick];
      std::vector<Shape> shapes;
      for (int s = 0; s < kShapeCount; ++s)
        if (Shape(s) != old.shape) shapes.push_back(Shape(s));
      const Shape to = shapes[rng.below(shapes.size())];
      auto sizes = sizes_for(to);
      rng.shuffle(sizes.begin(), sizes.end());
      for (int sz : sizes) {
        SceneObject repl = old;
        repl.shape = to;
        repl.size = sz;
        if (repl.vpos(rows) != old.vpos(rows) || repl.hpos(cols) != old.hpos(cols) || on_midline(repl, rows, cols))
          continue;
        SceneSpec trial = t.source;
        trial.objects[pick] = repl;
        if (!valid(trial)) continue;
        t.target = trial;
        t.instruction = std::string("replace the ") + name(old.color) + " " + name(old.shape) + " with a " + name(to);
        t.patch_mask = footprint_mask({&old, &t.target.objects[pick]}, rows, cols);
        return t;
      }
      return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace

EditTriple random_edit(Rng& rng, int rows, int cols) {
  const EditOp op = EditOp(rng.below(kEditOpCount));
  for (;;)
    if (auto t = try_edit(rng, op, rows, cols)) return *t;
}

}  // namespace nep::scene
