#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "rem/corpus.hpp"

namespace testutil {

inline std::filesystem::path temp_dir(const std::string& tag) {
  static int counter = 0;
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  auto dir = std::filesystem::temp_directory_path() /
             ("rem-" + tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline rem::ObjectType make_type(const std::string& name, double prevalence, std::vector<double> mean,
                                  std::vector<double> std) {
  rem::ObjectType t;
  t.name = name;
  t.prevalence = prevalence;
  t.attribute_mean = std::move(mean);
  t.attribute_std = std::move(std);
  return t;
}

/// Two vehicle types over 4 latent attributes on a small map.
inline rem::CorpusSpec small_spec(std::uint64_t seed = 7) {
  rem::CorpusSpec s;
  s.segment_count = 3;
  s.frames_per_segment = 2;
  s.objects_per_segment = 4;
  s.map_half_extent_m = 30.0;
  s.max_range_m = 25.0;
  s.channels = 6;
  s.seed = seed;
  s.object_type_mixture = {make_type("car", 0.9, {4.5, 1.9, 1.6, 0.0}, {0.3, 0.1, 0.1, 1.0}),
                           make_type("truck", 0.1, {9.0, 2.5, 3.2, 2.0}, {0.8, 0.15, 0.2, 1.0})};
  return s;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace testutil
