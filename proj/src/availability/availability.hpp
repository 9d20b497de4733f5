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

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace storetorrent::availability {

// The product G/N * G/(N-1) * ... * G/(N-F), taken literally: F+1 factors.
// Requires N > F >= 1 and 0 <= G <= N-F.
double unavailable_fraction_paper(int n, int copies, int g);

// The worked x2 example, 1/N * 1/(N-1) * ... over F factors: 1/9900 for
// N=100, F=2.
double paper_worked_case(int n, int copies);

// Probability that all F distinct-node copies of a record fall inside a
// failed set of size c: prod_{i<F} (c-i)/(N-i).
double unavailable_fraction_exact(int n, int copies, int c);

struct PlacementModel {
  int n = 100;
  int copies = 2;
  int c = 2;
  std::uint64_t records = 1'000'000;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  // Fixed failed set (e.g. one rack). When empty a uniformly random
  // c-subset is drawn.
  std::vector<int> failed;
};

struct SimResult {
  double fraction = 0;
  double half_width = 0;  // 99% normal-approximation binomial interval
  std::uint64_t unavailable = 0;
  std::uint64_t records = 0;
};

// Places every record on F distinct uniform nodes and counts records whose
// copies all failed. Trials are split into `workers` shards with seeded
// substreams; the result depends only on (seed, workers).
SimResult simulate_unavailability(const PlacementModel& model);

// Raid1-style mirroring: N/s stripes of s mirrored nodes, each holding an
// equal share of the data. Expected unavailable fraction when c nodes fail
// uniformly at random.
double raid1_stripe_unavailable(int n, int stripe, int c);
// Unavailable fraction for a specific failed set.
double raid1_stripe_unavailable_for(int n, int stripe, const std::vector<int>& failed);

struct CsvRow {
  int n, copies, c;
};
// Columns N,F,c,exact,paper,mc,mc_halfwidth. The paper column is empty
// where the literal formula is undefined.
std::string availability_csv(const std::vector<CsvRow>& rows, std::uint64_t records, std::uint64_t seed,
                             unsigned workers = 1);

}  // namespace storetorrent::availability
