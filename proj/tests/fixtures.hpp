// Copyright 2026 The boxmatch Authors
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

// Small builders shared by the module tests.

#ifndef BOXMATCH__TESTS__FIXTURES_HPP_
#define BOXMATCH__TESTS__FIXTURES_HPP_

#include "boxmatch/worldsim.hpp"

#include <random>

namespace boxmatch::testing
{

inline worldsim::ViewFeatureMap random_feature_map(
  int views, int H, int W, int C, std::mt19937_64 & rng, double image_w = 800.0,
  double image_h = 448.0)
{
  std::normal_distribution<double> d(0.0, 1.0);
  worldsim::ViewFeatureMap fm;
  fm.views = views;
  fm.H = H;
  fm.W = W;
  fm.C = C;
  fm.image_width = image_w;
  fm.image_height = image_h;
  fm.present.assign(views, true);
  fm.data = Tensor({static_cast<std::size_t>(views), static_cast<std::size_t>(H),
                    static_cast<std::size_t>(W), static_cast<std::size_t>(C)});
  for (double & v : fm.data.data) {
    v = d(rng);
  }
  return fm;
}

inline Tensor row_permuted(const Tensor & t, const std::vector<std::size_t> & perm)
{
  Tensor out = t;
  for (std::size_t r = 0; r < perm.size(); ++r) {
    const auto src = t.row_span(perm[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

}  // namespace boxmatch::testing

#endif  // BOXMATCH__TESTS__FIXTURES_HPP_
