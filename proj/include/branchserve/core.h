/* Copyright 2026 The BranchServe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace branchserve {

// Malformed arguments or configuration (CLI exit code 1).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad input data: traces, weight files, reports (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Simulated durations and instants, integer milliseconds.
class Duration {
 public:
  constexpr Duration() = default;
  constexpr explicit Duration(std::int64_t ms) : ms_(ms) {}

  constexpr std::int64_t ms() const { return ms_; }
  constexpr double seconds() const { return static_cast<double>(ms_) / 1000.0; }

  constexpr Duration& operator+=(Duration o) {
    ms_ += o.ms_;
    return *this;
  }
  friend constexpr Duration operator+(Duration a, Duration b) { return Duration(a.ms_ + b.ms_); }
  friend constexpr Duration operator-(Duration a, Duration b) { return Duration(a.ms_ - b.ms_); }
  friend constexpr auto operator<=>(Duration, Duration) = default;

 private:
  std::int64_t ms_ = 0;
};

class TimePoint {
 public:
  constexpr TimePoint() = default;
  constexpr explicit TimePoint(std::int64_t ms) : ms_(ms) {}

  constexpr std::int64_t ms() const { return ms_; }

  constexpr TimePoint& operator+=(Duration d) {
    ms_ += d.ms();
    return *this;
  }
  friend constexpr TimePoint operator+(TimePoint t, Duration d) { return TimePoint(t.ms_ + d.ms()); }
  friend constexpr Duration operator-(TimePoint a, TimePoint b) { return Duration(a.ms_ - b.ms_); }
  friend constexpr auto operator<=>(TimePoint, TimePoint) = default;

 private:
  std::int64_t ms_ = 0;
};

// A normalized answer. The empty text is the distinguished "no answer" value.
class Answer {
 public:
  Answer() = default;

  // Wraps text that is already normalized; use normalize_answer() for raw model output.
  static Answer from_normalized(std::string text) {
    Answer a;
    a.text_ = std::move(text);
    return a;
  }

  const std::string& text() const { return text_; }
  bool is_none() const { return text_.empty(); }

  friend auto operator<=>(const Answer&, const Answer&) = default;
  friend bool operator==(const Answer&, const Answer&) = default;

 private:
  std::string text_;
};

// Trims whitespace, strips \boxed{...}, matched outer braces and $...$, and
// case-folds ASCII. Iterates to a fixed point, so it is idempotent.
Answer normalize_answer(std::string_view raw);

class VoteTally {
 public:
  void add(const Answer& answer, int count = 1);

  int total() const { return total_; }
  bool empty() const { return total_ == 0; }
  int count(const Answer& answer) const;
  // Largest count of any single answer (0 when empty).
  int max_count() const;
  const std::map<Answer, int>& counts() const { return counts_; }

  friend bool operator==(const VoteTally&, const VoteTally&) = default;

 private:
  std::map<Answer, int> counts_;
  int total_ = 0;
};

// Answer with the highest count; ties go to the lexicographically smallest text.
// Throws std::invalid_argument("no answers collected") on an empty tally.
Answer majority_vote(const VoteTally& tally);

class DifficultyLabel {
 public:
  static constexpr int kMinLevel = 1;
  static constexpr int kMaxLevel = 5;
  static constexpr int kNumLevels = kMaxLevel - kMinLevel + 1;

  explicit DifficultyLabel(int level) : level_(level) {
    if (level < kMinLevel || level > kMaxLevel) {
      throw std::invalid_argument("difficulty level must be in 1..5, got " + std::to_string(level));
    }
  }

  int level() const { return level_; }
  friend auto operator<=>(DifficultyLabel, DifficultyLabel) = default;

 private:
  int level_;
};

// 1-based rank ceil(p/100 * n), at least 1.
std::size_t nearest_rank_index(std::size_t n, double p);

// Nearest-rank percentile, p in (0, 100].
template <typename T>
T percentile(std::span<const T> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty list");
  if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentile p must be in (0, 100]");
  std::vector<T> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[nearest_rank_index(sorted.size(), p) - 1];
}

template <typename T>
T percentile(const std::vector<T>& values, double p) {
  return percentile(std::span<const T>(values), p);
}

// Stable 64-bit FNV-1a, used for workload identity hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Independent per-stream generator derived from a base seed and stream ids.
Rng derive_rng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b = 0);

}  // namespace branchserve
