#include "mgtok/scene.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mgtok {

namespace {

constexpr std::array<std::string_view, 3> kShapeNames{"square", "circle", "triangle"};
constexpr std::array<std::string_view, 4> kColorNames{"red", "green", "blue", "yellow"};
constexpr std::array<std::string_view, 4> kKindNames{"existence", "count", "color", "position"};
constexpr std::array<Pixel, 4> kPalette{Pixel{220, 40, 40}, Pixel{40, 200, 60}, Pixel{50, 80, 230},
                                        Pixel{230, 210, 40}};
constexpr int kBackgroundLevel = 90;

template <class E, std::size_t N>
E parse_name(std::string_view s, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  throw Error(ErrorCode::invalid_argument, std::string("unknown ") + what + " '" + std::string(s) + "'");
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool boxes_clear(const BBox& a, const BBox& b, int margin) {
  return a.x_max + margin <= b.x_min || b.x_max + margin <= a.x_min || a.y_max + margin <= b.y_min ||
         b.y_max + margin <= a.y_min;
}

const SceneObject* find_object(const Scene& scene, Shape shape, Color color) {
  for (const SceneObject& o : scene.objects) {
    if (o.shape == shape && o.color == color) return &o;
  }
  return nullptr;
}

int shape_count(const Scene& scene, Shape shape) {
  return static_cast<int>(std::count_if(scene.objects.begin(), scene.objects.end(),
                                        [&](const SceneObject& o) { return o.shape == shape; }));
}

}  // namespace

std::string_view to_string(Shape s) { return kShapeNames[static_cast<std::size_t>(s)]; }
std::string_view to_string(Color c) { return kColorNames[static_cast<std::size_t>(c)]; }
std::string_view to_string(QuestionKind k) { return kKindNames[static_cast<std::size_t>(k)]; }
Shape parse_shape(std::string_view s) { return parse_name<Shape>(s, kShapeNames, "shape"); }
Color parse_color(std::string_view s) { return parse_name<Color>(s, kColorNames, "color"); }
QuestionKind parse_question_kind(std::string_view s) {
  return parse_name<QuestionKind>(s, kKindNames, "question kind");
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::config, "scene spec: " + m); };
  if (image_side < 8 || image_side > 4096) fail("image_side must be in [8, 4096]");
  if (min_objects < 0 || max_objects < min_objects) fail("object count range is empty");
  if (max_objects > static_cast<int>(kAllShapes.size() * kAllColors.size()))
    fail("more objects than distinct shape/color pairs");
  if (min_size < 3 || max_size < min_size || max_size > image_side) fail("object size range is invalid");
  if (min_margin < 0) fail("min_margin must be >= 0");
  if (background_noise < 0 || background_noise > kBackgroundLevel) fail("background_noise out of range");
  if (max_attempts < 1) fail("max_attempts must be >= 1");
}

BitGrid rasterize(Shape shape, const BBox& bbox, int side) {
  BitGrid mask(static_cast<std::size_t>(side), static_cast<std::size_t>(side), 0);
  const double cx = bbox.center_x();
  const double cy = bbox.center_y();
  const double size = bbox.width();
  for (int y = std::max(0, bbox.y_min); y < std::min(side, bbox.y_max); ++y) {
    for (int x = std::max(0, bbox.x_min); x < std::min(side, bbox.x_max); ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      bool inside = false;
      switch (shape) {
        case Shape::square:
          inside = true;
          break;
        case Shape::circle: {
          const double r = 0.5 * size;
          inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
          break;
        }
        case Shape::triangle: {
          // Apex at the top center, base along the bottom edge.
          const double t = (py - bbox.y_min) / bbox.height();
          inside = std::abs(px - cx) <= 0.5 * t * size;
          break;
        }
      }
      if (inside) mask(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
    }
  }
  return mask;
}

Scene generate_scene(const SceneSpec& spec, std::uint32_t id, Rng& rng) {
  spec.validate();
  Scene scene;
  scene.id = id;
  const auto side = static_cast<std::size_t>(spec.image_side);
  scene.pixels = PixelImage(side, side);
  for (Pixel& p : scene.pixels) {
    const int v = kBackgroundLevel + rng.between(-spec.background_noise, spec.background_noise);
    p = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v)};
  }

  std::vector<std::pair<Shape, Color>> combos;
  for (Shape s : kAllShapes) {
    for (Color c : kAllColors) combos.emplace_back(s, c);
  }
  rng.shuffle(combos.begin(), combos.end());

  const int n = rng.between(spec.min_objects, spec.max_objects);
  for (int k = 0; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
      const int size = rng.between(spec.min_size, spec.max_size);
      const int x0 = rng.between(0, spec.image_side - size);
      const int y0 = rng.between(0, spec.image_side - size);
      const BBox box{x0, y0, x0 + size, y0 + size};
      const bool clear = std::all_of(scene.objects.begin(), scene.objects.end(),
                                     [&](const SceneObject& o) { return boxes_clear(box, o.bbox, spec.min_margin); });
      if (!clear) continue;
      SceneObject obj;
      obj.shape = combos[static_cast<std::size_t>(k)].first;
      obj.color = combos[static_cast<std::size_t>(k)].second;
      obj.bbox = box;
      obj.mask = rasterize(obj.shape, box, spec.image_side);
      scene.objects.push_back(std::move(obj));
      placed = true;
    }
    if (!placed) {
      throw Error(ErrorCode::invalid_argument, "scene " + std::to_string(id) + ": could not place object " +
                                                   std::to_string(k) + " after " +
                                                   std::to_string(spec.max_attempts) + " attempts");
    }
  }
  for (const SceneObject& o : scene.objects) {
    const Pixel color = kPalette[static_cast<std::size_t>(o.color)];
    for (std::size_t i = 0; i < o.mask.size(); ++i) {
      if (o.mask[i]) scene.pixels[i] = color;
    }
  }
  return scene;
}

Image to_image(const PixelImage& pixels) {
  Image img(pixels.rows(), pixels.cols());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) img[i][ch] = pixels[i][ch] / 255.0;
  }
  return img;
}

Vocabulary::Vocabulary()
    : words_{"<pad>", "<bos>", "<sep>", "<eos>", "is",     "there", "a",    "how",    "many",     "what",
             "color", "the",   "where", "and",   "square", "circle", "triangle", "red", "green", "blue",
             "yellow", "yes",  "no",    "0",     "1",      "2",     "3",    "4",      "top",      "bottom",
             "left",  "right"} {}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab;
  return vocab;
}

int Vocabulary::id(std::string_view word) const {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] == word) return static_cast<int>(i);
  }
  throw Error(ErrorCode::invalid_argument, "word '" + std::string(word) + "' is not in the vocabulary");
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw Error(ErrorCode::invalid_argument, "token id " + std::to_string(id) + " is out of range");
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view sentence) const {
  std::vector<int> ids;
  for (const std::string& w : split_words(sentence)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (!out.empty()) out += ' ';
    out += word(i);
  }
  return out;
}

std::string quadrant(const BBox& bbox, int image_side) {
  const double half = 0.5 * image_side;
  return std::string(bbox.center_y() < half ? "top" : "bottom") + " " + (bbox.center_x() < half ? "left" : "right");
}

Caption make_caption(const Scene& scene, int image_side) {
  std::vector<const SceneObject*> objs;
  for (const SceneObject& o : scene.objects) objs.push_back(&o);
  std::stable_sort(objs.begin(), objs.end(), [](const SceneObject* a, const SceneObject* b) {
    return std::pair(a->bbox.y_min, a->bbox.x_min) < std::pair(b->bbox.y_min, b->bbox.x_min);
  });
  Caption cap;
  cap.scene_id = scene.id;
  for (const SceneObject* o : objs) {
    if (!cap.text.empty()) cap.text += " and ";
    cap.text += "a " + std::string(to_string(o->color)) + " " + std::string(to_string(o->shape)) + " " +
                quadrant(o->bbox, image_side);
  }
  return cap;
}

std::size_t existence_per_scene(int count) {
  return count <= 0 ? 0 : static_cast<std::size_t>((count + 3) / 4);
}

std::vector<QAItem> make_questions(const Scene& scene, int image_side, int count,
                                   std::size_t first_existence_index, Rng& rng) {
  std::vector<QAItem> out;
  std::size_t existence_index = first_existence_index;
  for (int q = 0; q < count; ++q) {
    QAItem item;
    item.scene_id = scene.id;
    item.kind = kAllQuestionKinds[static_cast<std::size_t>(q % 4)];
    if (item.kind == QuestionKind::color) {
      std::vector<Shape> unique;
      for (Shape s : kAllShapes) {
        if (shape_count(scene, s) == 1) unique.push_back(s);
      }
      if (unique.empty()) {
        item.kind = QuestionKind::count;
      } else {
        const Shape s = unique[rng.below(unique.size())];
        item.question = "what color is the " + std::string(to_string(s));
      }
    }
    if (item.kind == QuestionKind::position && scene.objects.empty()) item.kind = QuestionKind::count;

    switch (item.kind) {
      case QuestionKind::existence: {
        const bool want_yes = existence_index++ % 2 == 0;
        Shape s{};
        Color c{};
        if (want_yes && !scene.objects.empty()) {
          const SceneObject& o = scene.objects[rng.below(scene.objects.size())];
          s = o.shape;
          c = o.color;
        } else {
          if (want_yes) throw Error(ErrorCode::invalid_argument, "an existence 'yes' needs at least one object");
          std::vector<std::pair<Shape, Color>> absent;
          for (Shape sh : kAllShapes) {
            for (Color co : kAllColors) {
              if (!find_object(scene, sh, co)) absent.emplace_back(sh, co);
            }
          }
          std::tie(s, c) = absent[rng.below(absent.size())];
        }
        item.question = "is there a " + std::string(to_string(c)) + " " + std::string(to_string(s));
        break;
      }
      case QuestionKind::count: {
        const Shape s = kAllShapes[rng.below(kAllShapes.size())];
        item.question = "how many " + std::string(to_string(s));
        break;
      }
      case QuestionKind::color:
        break;
      case QuestionKind::position: {
        const SceneObject& o = scene.objects[rng.below(scene.objects.size())];
        item.question = "where is the " + std::string(to_string(o.color)) + " " + std::string(to_string(o.shape));
        break;
      }
    }
    const auto answer = answer_from_ground_truth(scene, image_side, item.kind, item.question);
    if (!answer) throw Error(ErrorCode::invalid_argument, "generated question has no ground-truth answer: " + item.question);
    item.answer = *answer;
    out.push_back(std::move(item));
  }
  return out;
}

std::optional<std::string> answer_from_ground_truth(const Scene& scene, int image_side, QuestionKind kind,
                                                    std::string_view question) {
  const auto w = split_words(question);
  try {
    switch (kind) {
      case QuestionKind::existence:
        if (w.size() != 5 || w[0] != "is" || w[1] != "there" || w[2] != "a") return std::nullopt;
        return find_object(scene, parse_shape(w[4]), parse_color(w[3])) ? "yes" : "no";
      case QuestionKind::count:
        if (w.size() != 3 || w[0] != "how" || w[1] != "many") return std::nullopt;
        return std::to_string(shape_count(scene, parse_shape(w[2])));
      case QuestionKind::color: {
        if (w.size() != 5 || w[0] != "what" || w[1] != "color" || w[2] != "is" || w[3] != "the") return std::nullopt;
        const Shape s = parse_shape(w[4]);
        if (shape_count(scene, s) != 1) return std::nullopt;
        for (const SceneObject& o : scene.objects) {
          if (o.shape == s) return std::string(to_string(o.color));
        }
        return std::nullopt;
      }
      case QuestionKind::position: {
        if (w.size() != 5 || w[0] != "where" || w[1] != "is" || w[2] != "the") return std::nullopt;
        const SceneObject* o = find_object(scene, parse_shape(w[4]), parse_color(w[3]));
        if (!o) return std::nullopt;
        return quadrant(o->bbox, image_side);
      }
    }
  } catch (const Error&) {
    return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace mgtok
