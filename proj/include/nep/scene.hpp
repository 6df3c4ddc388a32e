#pragma once
// Synthetic shapes world on the patch grid: scene specs, a patch-exact
// renderer, caption/instruction grammar, edit triples, and an analyzer that
// recovers objects from any token grid (used for analytic rewards).

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nep/rng.hpp"
#include "nep/tokenizer.hpp"

namespace nep::scene {

enum class Shape { Square, Circle, Bar };
enum class Color { Red, Green, Blue, Yellow, Cyan, Magenta, Orange, Purple };
enum class Background { Black, Gray, White };
enum class VPos { Top, Bottom };
enum class HPos { Left, Right };

inline constexpr int kShapeCount = 3;
inline constexpr int kColorCount = 8;
inline constexpr int kBackgroundCount = 3;

const char* name(Shape s);
const char* name(Color c);
const char* name(Background b);
const char* name(VPos v);
const char* name(HPos h);

Rgb rgb(Color c);
Rgb rgb(Background b);
std::optional<Color> color_of_rgb(Rgb c);

struct Cell {
  int row = 0, col = 0;
  bool operator==(const Cell&) const = default;
};

struct SceneObject {
  Shape shape = Shape::Square;
  Color color = Color::Red;
  int row = 0, col = 0;  // top-left cell of the bounding box
  int size = 2;          // bounding-box width in patches (bars are 1 row tall)

  std::vector<Cell> footprint() const;
  VPos vpos(int grid_rows) const;
  HPos hpos(int grid_cols) const;
  bool operator==(const SceneObject&) const = default;
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  Background background = Background::Black;
  int rows = 8, cols = 8;

  bool operator==(const SceneSpec&) const = default;
};

nlohmann::json to_json(const SceneSpec& s);
SceneSpec scene_from_json(const nlohmann::json& j);

// Objects within bounds, non-overlapping, at least one empty cell between
// objects, distinct colors.
bool valid(const SceneSpec& s);

TokenGrid render_grid(const SceneSpec& s, const TokenizerConfig& cfg);
Image render(const SceneSpec& s, const TokenizerConfig& cfg);

SceneSpec random_scene(Rng& rng, int rows, int cols, int min_objects = 1, int max_objects = 3);

// "red square top left and blue circle bottom right on black"
std::string caption(const SceneSpec& s);

struct ObjectFact {
  Color color;
  Shape shape;
  VPos vpos;
  HPos hpos;
  bool operator==(const ObjectFact&) const = default;
};

struct CaptionFacts {
  std::vector<ObjectFact> objects;
  Background background = Background::Black;
};

CaptionFacts facts_of(const SceneSpec& s);
std::optional<CaptionFacts> parse_caption(const std::string& text);

struct DetectedObject {
  int palette_id = 0;
  std::optional<Color> color;
  std::optional<Shape> shape;
  VPos vpos = VPos::Top;
  HPos hpos = HPos::Left;
  std::vector<Cell> cells;
};

struct Analysis {
  int background_id = 0;
  std::optional<Background> background;
  std::vector<DetectedObject> objects;
};

// Background = most frequent id (lowest on ties); objects = 4-connected
// same-id components of the rest.
Analysis analyze(const TokenGrid& grid, const TokenizerConfig& cfg);

// Fraction of caption facts (each object fact plus the background) that hold
// in the grid. The background fact "on X" holds only if the dominant color is
// X and every other component is one of the captioned objects. This is the
// analytic reward the critic learns to predict.
double scene_match_score(const TokenGrid& grid, const CaptionFacts& facts, const TokenizerConfig& cfg);

enum class EditOp { Recolor, Add, Remove, Replace };
inline constexpr int kEditOpCount = 4;
const char* name(EditOp op);

struct EditTriple {
  SceneSpec source, target;
  EditOp op = EditOp::Recolor;
  std::string instruction;
  std::vector<std::uint8_t> patch_mask;  // L bits: union of changed object footprints
};

// Op is drawn uniformly first; the scene is redrawn until the op applies.
EditTriple random_edit(Rng& rng, int rows, int cols);

}  // namespace nep::scene
