// Copyright 2026 The StoreTorrent Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "availability/availability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "common/error.hpp"

namespace storetorrent::availability {

namespace {

constexpr double kZ99 = 2.5758293035489004;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::invalid_argument, what);
}

std::uint64_t count_shard(const PlacementModel& m, const std::vector<char>& failed, std::uint64_t records,
                          unsigned shard) {
  std::seed_seq seq{static_cast<std::uint32_t>(m.seed), static_cast<std::uint32_t>(m.seed >> 32), shard + 1u};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<int> node(0, m.n - 1);
  std::vector<int> chosen(static_cast<std::size_t>(m.copies));
  std::uint64_t lost = 0;
  for (std::uint64_t r = 0; r < records; ++r) {
    bool all_failed = true;
    for (int k = 0; k < m.copies; ++k) {
      int x;
      do {
        x = node(rng);
      } while (std::find(chosen.begin(), chosen.begin() + k, x) != chosen.begin() + k);
      chosen[static_cast<std::size_t>(k)] = x;
      all_failed = all_failed && failed[static_cast<std::size_t>(x)];
    }
    lost += all_failed;
  }
  return lost;
}

}  // namespace

double unavailable_fraction_paper(int n, int copies, int g) {
  require(n > 0 && copies >= 1 && g >= 0, "parameters must be positive");
  require(copies < n, "F must be below N");
  require(g <= n - copies, "G must not exceed N-F");
  double p = 1.0;
  for (int i = 0; i <= copies; ++i) p *= static_cast<double>(g) / (n - i);
  return p;
}

double paper_worked_case(int n, int copies) {
  require(n > 0 && copies >= 1 && copies <= n, "need 1 <= F <= N");
  double p = 1.0;
  for (int i = 0; i < copies; ++i) p /= (n - i);
  return p;
}

double unavailable_fraction_exact(int n, int copies, int c) {
  require(n > 0 && copies >= 1 && copies <= n, "need 1 <= F <= N");
  require(c >= 0 && c <= n, "need 0 <= c <= N");
  if (c < copies) return 0.0;
  // Reduced integer ratio, divided once so small cases are correctly rounded
  // (exactly 1/4950 for N=100, F=2, c=2); falls back to a running product
  // when the terms outgrow a double's mantissa.
  std::uint64_t num = 1, den = 1;
  constexpr std::uint64_t kExact = 1ull << 53;
  for (int i = 0; i < copies; ++i) {
    auto a = static_cast<std::uint64_t>(c - i), b = static_cast<std::uint64_t>(n - i);
    if (num > kExact / a || den > kExact / b) {
      double p = static_cast<double>(num) / static_cast<double>(den);
      for (int j = i; j < copies; ++j) p *= static_cast<double>(c - j) / (n - j);
      return p;
    }
    num *= a;
    den *= b;
    auto g = std::gcd(num, den);
    num /= g;
    den /= g;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

SimResult simulate_unavailability(const PlacementModel& m) {
  require(m.n > 0 && m.copies >= 1 && m.copies <= m.n, "need 1 <= F <= N");
  require(m.records >= 1, "need at least one record");
  std::vector<char> failed(static_cast<std::size_t>(m.n), 0);
  if (!m.failed.empty()) {
    for (int x : m.failed) {
      require(x >= 0 && x < m.n, "failed node out of range");
      failed[static_cast<std::size_t>(x)] = 1;
    }
  } else {
    require(m.c >= 0 && m.c <= m.n, "need 0 <= c <= N");
    std::vector<int> nodes(static_cast<std::size_t>(m.n));
    std::iota(nodes.begin(), nodes.end(), 0);
    std::mt19937_64 rng(m.seed ^ 0x9E3779B97F4A7C15ull);
    for (int i = 0; i < m.c; ++i) {
      std::uniform_int_distribution<int> pick(i, m.n - 1);
      std::swap(nodes[static_cast<std::size_t>(i)], nodes[static_cast<std::size_t>(pick(rng))]);
      failed[static_cast<std::size_t>(nodes[static_cast<std::size_t>(i)])] = 1;
    }
  }

  const unsigned workers = std::max(1u, m.workers);
  std::vector<std::uint64_t> counts(workers, 0);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    std::uint64_t share = m.records / workers + (w < m.records % workers ? 1 : 0);
    pool.emplace_back([&, w, share] { counts[w] = count_shard(m, failed, share, w); });
  }
  for (auto& t : pool) t.join();

  SimResult r;
  r.records = m.records;
  r.unavailable = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  r.fraction = static_cast<double>(r.unavailable) / static_cast<double>(m.records);
  r.half_width = kZ99 * std::sqrt(r.fraction * (1 - r.fraction) / static_cast<double>(m.records));
  return r;
}

double raid1_stripe_unavailable(int n, int stripe, int c) {
  require(n > 0 && stripe >= 1 && n % stripe == 0, "N must be divisible by the stripe size");
  require(c >= 0 && c <= n, "need 0 <= c <= N");
  // Each stripe carries 1/(N/s) of the data and is lost when all s of its
  // nodes are in the failed set: C(N-s, c-s) / C(N, c).
  if (c < stripe) return 0.0;
  double p = 1.0;
  for (int i = 0; i < stripe; ++i) p *= static_cast<double>(c - i) / (n - i);
  return p;
}

double raid1_stripe_unavailable_for(int n, int stripe, const std::vector<int>& failed) {
  require(n > 0 && stripe >= 1 && n % stripe == 0, "N must be divisible by the stripe size");
  std::vector<int> down(static_cast<std::size_t>(n / stripe), 0);
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (int x : failed) {
    require(x >= 0 && x < n, "failed node out of range");
    if (seen[static_cast<std::size_t>(x)]++) continue;
    ++down[static_cast<std::size_t>(x / stripe)];
  }
  auto lost = std::count(down.begin(), down.end(), stripe);
  return static_cast<double>(lost) / static_cast<double>(n / stripe);
}

std::string availability_csv(const std::vector<CsvRow>& rows, std::uint64_t records, std::uint64_t seed,
                             unsigned workers) {
  std::ostringstream out;
  out.precision(10);
  out << "N,F,c,exact,paper,mc,mc_halfwidth\n";
  for (const auto& row : rows) {
    auto sim = simulate_unavailability(PlacementModel{row.n, row.copies, row.c, records, seed, workers, {}});
    out << row.n << ',' << row.copies << ',' << row.c << ',' << unavailable_fraction_exact(row.n, row.copies, row.c)
        << ',';
    if (row.copies < row.n && row.c <= row.n - row.copies) out << unavailable_fraction_paper(row.n, row.copies, row.c);
    out << ',' << sim.fraction << ',' << sim.half_width << '\n';
  }
  return out.str();
}

}  // namespace storetorrent::availability
