#include "mgtok/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgtok/binary_io.hpp"
#include "mgtok/mask_io.hpp"

namespace mgtok {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string scene_stem(std::uint32_t id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06u", id);
  return buf;
}

json spec_to_json(const SceneSpec& s) {
  return {{"image_side", s.image_side}, {"min_objects", s.min_objects}, {"max_objects", s.max_objects},
          {"min_size", s.min_size},     {"max_size", s.max_size},       {"min_margin", s.min_margin},
          {"background_noise", s.background_noise}, {"max_attempts", s.max_attempts}};
}

SceneSpec spec_from_json(const json& j) {
  SceneSpec s;
  s.image_side = j.at("image_side").get<int>();
  s.min_objects = j.at("min_objects").get<int>();
  s.max_objects = j.at("max_objects").get<int>();
  s.min_size = j.at("min_size").get<int>();
  s.max_size = j.at("max_size").get<int>();
  s.min_margin = j.at("min_margin").get<int>();
  s.background_noise = j.at("background_noise").get<int>();
  s.max_attempts = j.at("max_attempts").get<int>();
  return s;
}

std::vector<std::uint8_t> to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

std::string jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const json& r : rows) out += r.dump() + "\n";
  return out;
}

std::vector<json> parse_jsonl(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  std::vector<json> rows;
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(ErrorCode::corrupt, name + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

[[noreturn]] void corrupt(const std::string& what) { throw FormatError(ErrorCode::corrupt, what); }

constexpr const char* kManifestCrcKey = "manifest_crc32";
constexpr const char* kManifestCrcPlaceholder = "00000000";

std::string hex8(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

/// Offset of the 8 hex digits of the manifest's own checksum.
std::size_t manifest_crc_offset(const std::string& text) {
  const std::string key = std::string("\"") + kManifestCrcKey + "\": \"";
  const std::size_t at = text.find(key);
  if (at == std::string::npos || text.find(key, at + 1) != std::string::npos || at + key.size() + 9 > text.size() ||
      text[at + key.size() + 8] != '"')
    corrupt("manifest.json: missing or malformed " + std::string(kManifestCrcKey));
  return at + key.size();
}

}  // namespace

bool operator==(const Dataset& a, const Dataset& b) {
  auto spec_eq = [](const SceneSpec& x, const SceneSpec& y) { return spec_to_json(x) == spec_to_json(y); };
  if (!spec_eq(a.spec, b.spec) || a.seed != b.seed || a.qa_per_scene != b.qa_per_scene) return false;
  if (a.scenes.size() != b.scenes.size() || a.qa.size() != b.qa.size() || a.captions.size() != b.captions.size())
    return false;
  for (std::size_t i = 0; i < a.scenes.size(); ++i) {
    const Scene& x = a.scenes[i];
    const Scene& y = b.scenes[i];
    if (x.id != y.id || !(x.pixels == y.pixels) || x.objects.size() != y.objects.size()) return false;
    for (std::size_t k = 0; k < x.objects.size(); ++k) {
      const SceneObject& p = x.objects[k];
      const SceneObject& q = y.objects[k];
      if (p.shape != q.shape || p.color != q.color || !(p.bbox == q.bbox) || !(p.mask == q.mask)) return false;
    }
  }
  for (std::size_t i = 0; i < a.qa.size(); ++i) {
    const QAItem& x = a.qa[i];
    const QAItem& y = b.qa[i];
    if (x.kind != y.kind || x.scene_id != y.scene_id || x.question != y.question || x.answer != y.answer)
      return false;
  }
  for (std::size_t i = 0; i < a.captions.size(); ++i) {
    if (a.captions[i].scene_id != b.captions[i].scene_id || a.captions[i].text != b.captions[i].text) return false;
  }
  return true;
}

Dataset gen_dataset(const SceneSpec& spec, std::size_t n_scenes, int qa_per_scene, std::uint64_t seed,
                    std::size_t workers) {
  spec.validate();
  if (n_scenes < 1) throw Error(ErrorCode::invalid_argument, "gen_dataset needs at least one scene");
  if (qa_per_scene < 0) throw Error(ErrorCode::invalid_argument, "qa_per_scene must be >= 0");
  if (spec.min_objects < 1 && qa_per_scene > 0) {
    throw Error(ErrorCode::config, "existence questions need min_objects >= 1 so every 'yes' has an object");
  }
  Dataset data;
  data.spec = spec;
  data.seed = seed;
  data.qa_per_scene = qa_per_scene;
  data.scenes.resize(n_scenes);
  std::vector<std::vector<QAItem>> per_scene(n_scenes);
  const Rng root(seed);
  const std::size_t e_per = existence_per_scene(qa_per_scene);
  parallel_for(n_scenes, workers, [&](std::size_t i) {
    Rng rng = root.split(i);
    data.scenes[i] = generate_scene(spec, static_cast<std::uint32_t>(i), rng);
    per_scene[i] = make_questions(data.scenes[i], spec.image_side, qa_per_scene, i * e_per, rng);
  });
  for (std::size_t i = 0; i < n_scenes; ++i) {
    data.captions.push_back(make_caption(data.scenes[i], spec.image_side));
    for (QAItem& q : per_scene[i]) data.qa.push_back(std::move(q));
  }
  for (const QAItem& q : data.qa) {
    const auto truth = answer_from_ground_truth(data.scenes[q.scene_id], spec.image_side, q.kind, q.question);
    if (!truth || *truth != q.answer) {
      throw Error(ErrorCode::invalid_argument, "generator self-check failed on '" + q.question + "'");
    }
  }
  return data;
}

std::vector<std::uint8_t> encode_ppm(const PixelImage& image) {
  const std::string header = "P6\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.size() * 3);
  for (const Pixel& p : image) out.insert(out.end(), p.begin(), p.end());
  return out;
}

PixelImage decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  // Header tokens are separated by single whitespace characters; comments
  // are not supported.
  auto token = [&]() {
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) {
      t += static_cast<char>(bytes[pos++]);
      if (t.size() > 8) throw FormatError(ErrorCode::corrupt, "PPM header token too long", pos);
    }
    if (pos >= bytes.size()) throw FormatError(ErrorCode::truncated, "PPM header ends early", pos);
    ++pos;
    return t;
  };
  auto number = [&](const char* what) {
    const std::string t = token();
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
      throw FormatError(ErrorCode::corrupt, std::string("PPM ") + what + " is not a number", pos);
    }
    return std::stoul(t);
  };
  if (token() != "P6") throw FormatError(ErrorCode::bad_magic, "not a binary PPM (P6)", 0);
  const std::size_t w = number("width");
  const std::size_t h = number("height");
  if (number("maxval") != 255) throw FormatError(ErrorCode::unsupported_version, "PPM maxval must be 255", pos);
  if (w == 0 || h == 0 || w > 4096 || h > 4096) throw FormatError(ErrorCode::corrupt, "PPM dimensions out of range", pos);
  const std::size_t need = w * h * 3;
  if (bytes.size() - pos < need) throw FormatError(ErrorCode::truncated, "PPM pixel data truncated", bytes.size());
  if (bytes.size() - pos > need) throw FormatError(ErrorCode::corrupt, "trailing bytes after PPM pixel data", pos + need);
  PixelImage img(h, w);
  for (Pixel& p : img) {
    p = {bytes[pos], bytes[pos + 1], bytes[pos + 2]};
    pos += 3;
  }
  return img;
}

MaskSet object_maskset(const Scene& scene, int image_side) {
  MaskSet set;
  set.image_side = image_side;
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    MaskProposal p;
    p.mask = scene.objects[k].mask;
    p.bbox = scene.objects[k].bbox;
    p.confidence = 1.0;
    p.source_object = static_cast<int>(k);
    set.proposals.push_back(std::move(p));
  }
  return set;
}

void write_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir / "scenes");
  fs::create_directories(dir / "masks");
  json files = json::object();
  auto put = [&](const std::string& rel, const std::vector<std::uint8_t>& bytes) {
    write_file_bytes(dir / rel, bytes);
    files[rel] = crc32(bytes);
  };
  const int side = data.spec.image_side;
  std::vector<json> objects, captions, qa;
  for (const Scene& s : data.scenes) {
    const std::string stem = scene_stem(s.id);
    put("scenes/" + stem + ".ppm", encode_ppm(s.pixels));
    put("masks/" + stem + ".mgms", encode_maskset(object_maskset(s, side)));
    json objs = json::array();
    for (const SceneObject& o : s.objects) {
      objs.push_back({{"shape", to_string(o.shape)},
                      {"color", to_string(o.color)},
                      {"bbox", {o.bbox.x_min, o.bbox.y_min, o.bbox.x_max, o.bbox.y_max}}});
    }
    objects.push_back({{"scene", s.id}, {"objects", objs}});
  }
  for (const Caption& c : data.captions) captions.push_back({{"scene", c.scene_id}, {"caption", c.text}});
  for (const QAItem& q : data.qa) {
    qa.push_back({{"scene", q.scene_id}, {"kind", to_string(q.kind)}, {"question", q.question}, {"answer", q.answer}});
  }
  put("objects.jsonl", to_bytes(jsonl(objects)));
  put("captions.jsonl", to_bytes(jsonl(captions)));
  put("qa.jsonl", to_bytes(jsonl(qa)));

  std::vector<std::string> vocab;
  const Vocabulary& v = Vocabulary::standard();
  for (std::size_t i = 0; i < v.size(); ++i) vocab.push_back(v.word(static_cast<int>(i)));
  const json manifest = {{"schema_version", kDatasetSchemaVersion},
                         {"spec", spec_to_json(data.spec)},
                         {"seed", data.seed},
                         {"n_scenes", data.scenes.size()},
                         {"qa_per_scene", data.qa_per_scene},
                         {"vocabulary", vocab},
                         {"files", files},
                         {kManifestCrcKey, kManifestCrcPlaceholder}};
  // The manifest checksums itself: CRC32 of its own bytes with the hex
  // value replaced by the placeholder.
  std::string text = manifest.dump(2) + "\n";
  const std::size_t at = manifest_crc_offset(text);
  text.replace(at, 8, hex8(crc32(to_bytes(text))));
  write_file_bytes(dir / "manifest.json", to_bytes(text));
}

Dataset read_dataset(const fs::path& dir) {
  json manifest;
  try {
    const auto bytes = read_file_bytes(dir / "manifest.json");
    std::string text(bytes.begin(), bytes.end());
    const std::size_t at = manifest_crc_offset(text);
    const std::string stored = text.substr(at, 8);
    text.replace(at, 8, kManifestCrcPlaceholder);
    if (stored != hex8(crc32(to_bytes(text))))
      throw FormatError(ErrorCode::checksum_mismatch, "manifest.json: checksum mismatch");
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(ErrorCode::corrupt, std::string("manifest.json: ") + e.what());
  }
  Dataset data;
  json files;
  std::size_t n_scenes = 0;
  try {
    const int version = manifest.at("schema_version").get<int>();
    if (version != kDatasetSchemaVersion) {
      throw FormatError(ErrorCode::unsupported_version,
                        "dataset schema_version " + std::to_string(version) + " is not supported");
    }
    data.spec = spec_from_json(manifest.at("spec"));
    data.seed = manifest.at("seed").get<std::uint64_t>();
    data.qa_per_scene = manifest.at("qa_per_scene").get<int>();
    n_scenes = manifest.at("n_scenes").get<std::size_t>();
    files = manifest.at("files");
    const Vocabulary& v = Vocabulary::standard();
    const auto vocab = manifest.at("vocabulary").get<std::vector<std::string>>();
    if (vocab.size() != v.size()) corrupt("vocabulary differs from the built-in word list");
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      if (vocab[i] != v.word(static_cast<int>(i))) corrupt("vocabulary differs from the built-in word list");
    }
  } catch (const json::exception& e) {
    throw FormatError(ErrorCode::corrupt, std::string("manifest.json: ") + e.what());
  }
  try {
    data.spec.validate();
  } catch (const Error& e) {
    corrupt(std::string("manifest spec rejected: ") + e.what());
  }
  if (n_scenes > 10'000'000) corrupt("implausible scene count");

  auto load = [&](const std::string& rel) {
    if (!files.contains(rel)) corrupt("manifest lists no checksum for " + rel);
    const auto bytes = read_file_bytes(dir / rel);
    std::uint32_t expected = 0;
    try {
      expected = files.at(rel).get<std::uint32_t>();
    } catch (const json::exception&) {
      corrupt("bad checksum entry for " + rel);
    }
    if (crc32(bytes) != expected) throw FormatError(ErrorCode::checksum_mismatch, rel + ": checksum mismatch");
    return bytes;
  };

  const int side = data.spec.image_side;
  try {
    const auto objects = parse_jsonl(load("objects.jsonl"), "objects.jsonl");
    if (objects.size() != n_scenes) corrupt("objects.jsonl has " + std::to_string(objects.size()) + " records");
    for (std::size_t i = 0; i < n_scenes; ++i) {
      Scene s;
      s.id = static_cast<std::uint32_t>(i);
      if (objects[i].at("scene").get<std::uint32_t>() != s.id) corrupt("objects.jsonl is out of order");
      const std::string stem = scene_stem(s.id);
      s.pixels = decode_ppm(load("scenes/" + stem + ".ppm"));
      if (s.pixels.rows() != static_cast<std::size_t>(side) || s.pixels.cols() != static_cast<std::size_t>(side))
        corrupt("scene " + stem + " has the wrong size");
      const MaskSet masks = decode_maskset(load("masks/" + stem + ".mgms"));
      const auto& list = objects[i].at("objects");
      if (masks.image_side != side || masks.proposals.size() != list.size() || masks.background)
        corrupt("mask file of scene " + stem + " does not match its object list");
      for (std::size_t k = 0; k < list.size(); ++k) {
        SceneObject o;
        o.shape = parse_shape(list[k].at("shape").get<std::string>());
        o.color = parse_color(list[k].at("color").get<std::string>());
        const auto b = list[k].at("bbox").get<std::vector<int>>();
        if (b.size() != 4) corrupt("bbox must have four entries");
        o.bbox = {b[0], b[1], b[2], b[3]};
        o.mask = masks.proposals[k].mask;
        if (!(masks.proposals[k].bbox == o.bbox) || !(rasterize(o.shape, o.bbox, side) == o.mask))
          corrupt("mask " + std::to_string(k) + " of scene " + stem + " disagrees with its object record");
        s.objects.push_back(std::move(o));
      }
      data.scenes.push_back(std::move(s));
    }
    for (const json& r : parse_jsonl(load("captions.jsonl"), "captions.jsonl")) {
      Caption c{r.at("scene").get<std::uint32_t>(), r.at("caption").get<std::string>()};
      if (c.scene_id >= n_scenes) corrupt("caption refers to a missing scene");
      Vocabulary::standard().encode(c.text);
      data.captions.push_back(std::move(c));
    }
    for (const json& r : parse_jsonl(load("qa.jsonl"), "qa.jsonl")) {
      QAItem q;
      q.scene_id = r.at("scene").get<std::uint32_t>();
      q.kind = parse_question_kind(r.at("kind").get<std::string>());
      q.question = r.at("question").get<std::string>();
      q.answer = r.at("answer").get<std::string>();
      if (q.scene_id >= n_scenes) corrupt("question refers to a missing scene");
      Vocabulary::standard().encode(q.question);
      Vocabulary::standard().encode(q.answer);
      data.qa.push_back(std::move(q));
    }
  } catch (const json::exception& e) {
    corrupt(std::string("dataset record: ") + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::io) throw;
    corrupt(e.what());
  }
  return data;
}

}  // namespace mgtok
