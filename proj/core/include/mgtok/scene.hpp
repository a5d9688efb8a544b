#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mgtok/mask_ops.hpp"
#include "mgtok/numerics.hpp"
#include "mgtok/vision_encoder.hpp"

namespace mgtok {

enum class Shape : std::uint8_t { square, circle, triangle };
enum class Color : std::uint8_t { red, green, blue, yellow };
inline constexpr std::array<Shape, 3> kAllShapes{Shape::square, Shape::circle, Shape::triangle};
inline constexpr std::array<Color, 4> kAllColors{Color::red, Color::green, Color::blue, Color::yellow};

std::string_view to_string(Shape s);
std::string_view to_string(Color c);
Shape parse_shape(std::string_view s);
Color parse_color(std::string_view s);

using Pixel = std::array<std::uint8_t, 3>;
using PixelImage = Grid2D<Pixel>;

struct SceneSpec {
  int image_side = 48;
  int min_objects = 1;
  int max_objects = 4;
  int min_size = 10;
  int max_size = 16;
  /// Empty pixels required between the boxes of two objects.
  int min_margin = 2;
  /// Background pixels are gray +- this much uniform noise.
  int background_noise = 12;
  /// Placement attempts per object before giving up.
  int max_attempts = 200;

  void validate() const;
};

struct SceneObject {
  Shape shape = Shape::square;
  Color color = Color::red;
  /// Square bounding box of the shape.
  BBox bbox;
  BitGrid mask;
};

struct Scene {
  std::uint32_t id = 0;
  PixelImage pixels;
  std::vector<SceneObject> objects;
};

/// Objects never overlap, sit fully inside the image, and no two share both
/// shape and color. Throws invalid_argument when placement keeps failing.
Scene generate_scene(const SceneSpec& spec, std::uint32_t id, Rng& rng);

/// Exact mask of a shape drawn in `bbox` on a side x side canvas.
BitGrid rasterize(Shape shape, const BBox& bbox, int side);

/// Pixels scaled to [0, 1] for the encoder.
Image to_image(const PixelImage& pixels);

enum class QuestionKind : std::uint8_t { existence, count, color, position };
inline constexpr std::array<QuestionKind, 4> kAllQuestionKinds{QuestionKind::existence, QuestionKind::count,
                                                               QuestionKind::color, QuestionKind::position};
std::string_view to_string(QuestionKind k);
QuestionKind parse_question_kind(std::string_view s);

/// Fixed word list; ids 0..3 are the special tokens.
class Vocabulary {
 public:
  static const Vocabulary& standard();

  std::size_t size() const { return words_.size(); }
  int id(std::string_view word) const;
  const std::string& word(int id) const;
  std::vector<int> encode(std::string_view sentence) const;
  std::string decode(std::span<const int> ids) const;

 private:
  Vocabulary();
  std::vector<std::string> words_;
};

struct QAItem {
  QuestionKind kind = QuestionKind::existence;
  std::uint32_t scene_id = 0;
  std::string question;
  std::string answer;
};

struct Caption {
  std::uint32_t scene_id = 0;
  std::string text;
};

/// "top left", "bottom right", ... from the bbox center.
std::string quadrant(const BBox& bbox, int image_side);

/// One short sentence listing every object.
Caption make_caption(const Scene& scene, int image_side);

/// Questions for one scene, cycling through the kinds. Existence question
/// number k in the whole dataset has answer "yes" iff k is even;
/// `first_existence_index` is that running index for this scene.
std::vector<QAItem> make_questions(const Scene& scene, int image_side, int count,
                                   std::size_t first_existence_index, Rng& rng);

/// Number of existence questions make_questions emits for `count` questions.
std::size_t existence_per_scene(int count);

/// Recomputes the answer from the scene's object list; nullopt when the
/// question does not parse or refers to something ambiguous.
std::optional<std::string> answer_from_ground_truth(const Scene& scene, int image_side,
                                                    QuestionKind kind, std::string_view question);

}  // namespace mgtok
