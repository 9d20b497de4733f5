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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "availability/availability.hpp"
#include "common/error.hpp"

using namespace storetorrent;
using namespace storetorrent::availability;

namespace {

// Fraction of ordered F-tuples of distinct nodes lying entirely in `failed`,
// by enumeration.
double enumerate_fraction(int n, int copies, const std::vector<char>& failed) {
  std::uint64_t total = 0, lost = 0;
  std::vector<int> tuple;
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  std::function<void()> rec = [&] {
    if (static_cast<int>(tuple.size()) == copies) {
      ++total;
      bool all = true;
      for (int x : tuple) all = all && failed[static_cast<std::size_t>(x)];
      lost += all;
      return;
    }
    for (int x = 0; x < n; ++x) {
      if (used[static_cast<std::size_t>(x)]) continue;
      used[static_cast<std::size_t>(x)] = 1;
      tuple.push_back(x);
      rec();
      tuple.pop_back();
      used[static_cast<std::size_t>(x)] = 0;
    }
  };
  rec();
  return static_cast<double>(lost) / static_cast<double>(total);
}

// Calls fn for every c-subset of {0..n-1}.
void for_each_subset(int n, int c, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> pick;
  std::function<void(int)> rec = [&](int from) {
    if (static_cast<int>(pick.size()) == c) {
      fn(pick);
      return;
    }
    for (int x = from; x < n; ++x) {
      pick.push_back(x);
      rec(x + 1);
      pick.pop_back();
    }
  };
  rec(0);
}

}  // namespace

TEST(Availability, WorkedCaseIsOneIn9900) {
  EXPECT_DOUBLE_EQ(paper_worked_case(100, 2), 1.0 / 9900.0);
  EXPECT_NEAR(paper_worked_case(100, 2) * 100, 0.0101, 0.00005);
}

TEST(Availability, ExactTwoOfHundredIsOneIn4950) {
  EXPECT_DOUBLE_EQ(unavailable_fraction_exact(100, 2, 2), 1.0 / 4950.0);
  EXPECT_DOUBLE_EQ(unavailable_fraction_exact(100, 2, 2), (2.0 / 100) * (1.0 / 99));
}

TEST(Availability, LiteralFormulaHasFPlusOneFactors) {
  for (int n : {10, 50, 100}) {
    for (int f : {1, 2, 3}) {
      for (int g = 0; g <= n - f; g += 3) {
        double oracle = 1;
        for (int i = 0; i <= f; ++i) oracle *= static_cast<double>(g) / (n - i);
        EXPECT_DOUBLE_EQ(unavailable_fraction_paper(n, f, g), oracle);
      }
    }
  }
  EXPECT_EQ(unavailable_fraction_paper(100, 2, 0), 0.0);
  EXPECT_THROW(unavailable_fraction_paper(100, 2, 99), Error);
  EXPECT_THROW(unavailable_fraction_paper(2, 2, 0), Error);
}

TEST(Availability, ApproachesPowerLawForSmallF) {
  // With F much smaller than N and G, the distinct-node product tends to
  // (G/N)^F.
  for (int f : {1, 2, 3}) {
    int n = 100000, g = 20000;
    double limit = std::pow(static_cast<double>(g) / n, f);
    EXPECT_NEAR(unavailable_fraction_exact(n, f, g) / limit, 1.0, 1e-3);
  }
}

TEST(Availability, ExactEdgeCases) {
  EXPECT_EQ(unavailable_fraction_exact(10, 3, 2), 0.0);
  EXPECT_EQ(unavailable_fraction_exact(10, 3, 0), 0.0);
  EXPECT_DOUBLE_EQ(unavailable_fraction_exact(10, 3, 10), 1.0);
  EXPECT_DOUBLE_EQ(unavailable_fraction_exact(10, 10, 10), 1.0);
  EXPECT_THROW(unavailable_fraction_exact(10, 11, 3), Error);
  EXPECT_THROW(unavailable_fraction_exact(10, 2, 11), Error);
}

TEST(Availability, ExactMatchesEnumeration) {
  for (int n = 2; n <= 7; ++n) {
    for (int f = 1; f <= std::min(n, 3); ++f) {
      for (int c = 0; c <= n; ++c) {
        std::vector<char> failed(static_cast<std::size_t>(n), 0);
        for (int i = 0; i < c; ++i) failed[static_cast<std::size_t>(i)] = 1;
        EXPECT_NEAR(unavailable_fraction_exact(n, f, c), enumerate_fraction(n, f, failed), 1e-12)
            << n << "," << f << "," << c;
      }
    }
  }
}

TEST(Availability, ExactMonotone) {
  for (int n : {5, 20, 100}) {
    for (int f = 1; f <= 4; ++f) {
      double prev = 0;
      for (int c = 0; c <= n; ++c) {
        double p = unavailable_fraction_exact(n, f, c);
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
        EXPECT_GE(p, prev);
        prev = p;
        if (f > 1) {
          EXPECT_LE(p, unavailable_fraction_exact(n, f - 1, c));
        }
      }
    }
  }
}

TEST(Availability, FailedSetComposition) {
  // The fraction depends only on |C|: every subset of every size gives the
  // same enumerated value for N <= 12.
  for (int n : {6, 9, 12}) {
    for (int f = 1; f <= 3; ++f) {
      for (int c = 0; c <= n; c += (n >= 12 ? 3 : 1)) {
        double expect = unavailable_fraction_exact(n, f, c);
        std::set<long long> distinct;
        for_each_subset(n, c, [&](const std::vector<int>& subset) {
          std::vector<char> failed(static_cast<std::size_t>(n), 0);
          for (int x : subset) failed[static_cast<std::size_t>(x)] = 1;
          double got = enumerate_fraction(n, f, failed);
          distinct.insert(std::llround(got * 1e12));
          ASSERT_NEAR(got, expect, 1e-12);
        });
        EXPECT_EQ(distinct.size(), 1u);
      }
    }
  }
}

TEST(Availability, OneFailureLosesNothing) {
  for (int n : {2, 3, 10, 100}) {
    auto r = simulate_unavailability({n, 2, 1, 200000, 7, 1, {}});
    EXPECT_EQ(r.unavailable, 0u);
    EXPECT_EQ(r.fraction, 0.0);
  }
}

TEST(Availability, MonteCarloConverges) {
  const double exact = unavailable_fraction_exact(20, 2, 4);
  double prev_hw = 1;
  for (std::uint64_t records : {10000ull, 100000ull, 1000000ull}) {
    auto r = simulate_unavailability({20, 2, 4, records, 11, 1, {}});
    double sigma = std::sqrt(exact * (1 - exact) / static_cast<double>(records));
    EXPECT_NEAR(r.fraction, exact, 4 * sigma) << records;
    EXPECT_LT(r.half_width, prev_hw);
    prev_hw = r.half_width;
  }
}

TEST(Availability, RackSubsetMatchesRandomSubset) {
  // A fixed contiguous "rack" of failed nodes against the random-subset run.
  PlacementModel rack{30, 2, 6, 2000000, 5, 1, {0, 1, 2, 3, 4, 5}};
  PlacementModel random{30, 2, 6, 2000000, 6, 1, {}};
  auto a = simulate_unavailability(rack);
  auto b = simulate_unavailability(random);
  double exact = unavailable_fraction_exact(30, 2, 6);
  EXPECT_NEAR(a.fraction, exact, a.half_width * 1.5);
  EXPECT_NEAR(b.fraction, exact, b.half_width * 1.5);
  EXPECT_NEAR(a.fraction, b.fraction, a.half_width + b.half_width);
}

TEST(Availability, SeededAndShardedDeterministically) {
  PlacementModel m{50, 2, 5, 300000, 99, 3, {}};
  auto a = simulate_unavailability(m);
  auto b = simulate_unavailability(m);
  EXPECT_EQ(a.unavailable, b.unavailable);
  m.seed = 100;
  auto c = simulate_unavailability(m);
  EXPECT_NE(a.unavailable, c.unavailable);
}

TEST(Raid1Stripes, ForcedStripeLoss) {
  // Both nodes of one stripe down: that stripe's share, 1/(N/2), is lost.
  EXPECT_DOUBLE_EQ(raid1_stripe_unavailable_for(100, 2, {4, 5}), 1.0 / 50);
  EXPECT_DOUBLE_EQ(raid1_stripe_unavailable_for(100, 2, {5, 6}), 0.0);
  EXPECT_EQ(raid1_stripe_unavailable(100, 2, 1), 0.0);
  EXPECT_THROW(raid1_stripe_unavailable(100, 3, 2), Error);
}

TEST(Raid1Stripes, ExpectationMatchesEnumeration) {
  for (int n : {6, 12, 100}) {
    for (int c : {2, 3}) {
      if (n > 12 && c > 2) continue;
      double sum = 0;
      std::uint64_t count = 0;
      for_each_subset(n, c, [&](const std::vector<int>& s) {
        sum += raid1_stripe_unavailable_for(n, 2, s);
        ++count;
      });
      EXPECT_NEAR(raid1_stripe_unavailable(n, 2, c), sum / static_cast<double>(count), 1e-12);
    }
  }
}

TEST(Raid1Stripes, ContrastWithRandomPlacement) {
  // Conditional on a second failure, mirrored stripes lose O(1/N) of the data
  // when it hits the partner node, while random placement loses O(1/N^2) on
  // any second failure.
  double stripe_hit = raid1_stripe_unavailable_for(100, 2, {0, 1});
  EXPECT_DOUBLE_EQ(stripe_hit, 1.0 / 50);
  EXPECT_LT(unavailable_fraction_exact(100, 2, 2), stripe_hit / 50);
  // Averaged over uniformly random failures the expected loss of two-way
  // mirroring and two-copy random placement coincide.
  EXPECT_NEAR(raid1_stripe_unavailable(100, 2, 2), unavailable_fraction_exact(100, 2, 2), 1e-15);
}

TEST(AvailabilityCsv, Columns) {
  auto csv = availability_csv({{100, 2, 2}, {10, 3, 9}}, 10000, 1);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "N,F,c,exact,paper,mc,mc_halfwidth");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("100,2,2,", 0), 0u);
  std::getline(in, line);
  // c > N-F: the literal formula is undefined and left empty.
  EXPECT_NE(line.find(",,"), std::string::npos);
}
