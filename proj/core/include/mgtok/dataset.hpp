#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mgtok/scene.hpp"

namespace mgtok {

inline constexpr int kDatasetSchemaVersion = 1;

struct Dataset {
  SceneSpec spec;
  std::uint64_t seed = 0;
  int qa_per_scene = 0;
  std::vector<Scene> scenes;
  std::vector<QAItem> qa;
  std::vector<Caption> captions;
};

bool operator==(const Dataset& a, const Dataset& b);

/// Scene i is drawn from Rng(seed).split(i), so scenes can be generated in
/// any order or in parallel. Every answer is re-derived from the scene's
/// object list before it is accepted.
Dataset gen_dataset(const SceneSpec& spec, std::size_t n_scenes, int qa_per_scene, std::uint64_t seed,
                    std::size_t workers = 1);

// Directory layout:
//   manifest.json       schema_version, spec, seed, counts, vocabulary and a
//                       CRC32 for every other file
//   scenes/NNNNNN.ppm   binary PPM (P6, maxval 255)
//   masks/NNNNNN.mgms   ground-truth object masks (mask-set file)
//   objects.jsonl       one record per scene: shape, color and bbox per object
//   captions.jsonl      {"scene", "caption"}
//   qa.jsonl            {"scene", "kind", "question", "answer"}
void write_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Verifies every checksum in the manifest and that masks, objects and
/// pixels agree; any mismatch raises a structured error.
Dataset read_dataset(const std::filesystem::path& dir);

std::vector<std::uint8_t> encode_ppm(const PixelImage& image);
PixelImage decode_ppm(std::span<const std::uint8_t> bytes);

/// Ground-truth masks of a scene as a mask set (confidence 1, no background).
MaskSet object_maskset(const Scene& scene, int image_side);

}  // namespace mgtok
