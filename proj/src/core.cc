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

#include "branchserve/core.h"

#include <cctype>

namespace branchserve {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// True when the '{' at `open` is closed by the last character of `s`.
bool brace_closes_at_end(std::string_view s, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') {
      ++depth;
    } else if (s[i] == '}') {
      if (--depth == 0) return i + 1 == s.size();
    }
  }
  return false;
}

std::string_view strip_once(std::string_view s) {
  s = trim(s);
  constexpr std::string_view kBoxed = "\\boxed{";
  if (s.starts_with(kBoxed) && brace_closes_at_end(s, kBoxed.size() - 1)) {
    return s.substr(kBoxed.size(), s.size() - kBoxed.size() - 1);
  }
  if (s.size() >= 2 && s.front() == '{' && brace_closes_at_end(s, 0)) {
    return s.substr(1, s.size() - 2);
  }
  if (s.size() >= 2 && s.front() == '$' && s.back() == '$') {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

}  // namespace

Answer normalize_answer(std::string_view raw) {
  std::string_view s = raw;
  for (;;) {
    std::string_view next = strip_once(s);
    if (next == s) break;
    s = next;
  }
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return Answer::from_normalized(std::move(out));
}

void VoteTally::add(const Answer& answer, int count) {
  if (count < 0) throw std::invalid_argument("vote count must be non-negative");
  if (count == 0) return;
  counts_[answer] += count;
  total_ += count;
}

int VoteTally::count(const Answer& answer) const {
  auto it = counts_.find(answer);
  return it == counts_.end() ? 0 : it->second;
}

int VoteTally::max_count() const {
  int best = 0;
  for (const auto& [answer, n] : counts_) best = std::max(best, n);
  return best;
}

Answer majority_vote(const VoteTally& tally) {
  if (tally.empty()) throw std::invalid_argument("no answers collected");
  // std::map iterates in ascending text order, so the first strict maximum wins ties.
  const Answer* best = nullptr;
  int best_count = 0;
  for (const auto& [answer, n] : tally.counts()) {
    if (n > best_count) {
      best = &answer;
      best_count = n;
    }
  }
  return *best;
}

std::size_t nearest_rank_index(std::size_t n, double p) {
  // p * n / 100 keeps integral products exact (0.7 * 10 is not).
  const double rank = std::ceil(p * static_cast<double>(n) / 100.0 - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(rank, 1.0)), 1, n);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng derive_rng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_a), static_cast<std::uint32_t>(stream_a >> 32),
                    static_cast<std::uint32_t>(stream_b), static_cast<std::uint32_t>(stream_b >> 32)};
  return Rng(seq);
}

}  // namespace branchserve
