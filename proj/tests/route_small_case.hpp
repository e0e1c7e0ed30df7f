#pragma once

// Hand-set small routing instances shared by the fixture generator and the
// tests that load the frozen outputs.

#include "oracle.hpp"

namespace capmt_test {

inline capmt_oracle::RouteParams small_route_params() {
  capmt_oracle::RouteParams p;
  p.w_transform = {{{0.2, 0.1, 0.0, 0.0},
                    {0.0, 0.2, 0.1, 0.0},
                    {0.0, 0.0, 0.2, 0.1},
                    {0.1, 0.0, 0.0, 0.2}}};
  p.w_context = {{0.3, 0.0, 0.0, 0.1},
                 {0.0, 0.3, 0.0, 0.0},
                 {0.0, 0.1, 0.3, 0.0},
                 {0.0, 0.0, 0.0, 0.3}};
  p.w_visual = {{0.25, 0.0, 0.05, 0.0},
                {0.0, 0.25, 0.0, 0.0},
                {0.05, 0.0, 0.25, 0.0},
                {0.0, 0.0, 0.0, 0.25}};
  p.w_fuse = {{0.5, 0.0, 0.0, 0.0},
              {0.0, 0.5, 0.0, 0.0},
              {0.0, 0.0, 0.5, 0.0},
              {0.0, 0.0, 0.0, 0.5}};
  p.b_fuse = {0.01, -0.02, 0.03, -0.04};
  return p;
}

inline capmt_oracle::Vec small_route_context() { return {0.5, -1.0, 0.75, 0.25}; }

inline capmt_oracle::Mat small_route_features() {
  return {{1.0, 0.5, -0.25, 0.0}, {-0.5, 1.25, 0.75, -1.0}};
}

// Conventional-routing case: two high-level capsules, two iterations.
inline capmt_oracle::RouteParams small_conventional_params() {
  capmt_oracle::RouteParams p = small_route_params();
  p.w_transform.push_back({{0.1, 0.0, 0.0, 0.2},
                           {0.2, 0.1, 0.0, 0.0},
                           {0.0, 0.2, 0.1, 0.0},
                           {0.0, 0.0, 0.2, 0.1}});
  p.w_fuse = {{0.5, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0},
              {0.0, 0.5, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0},
              {0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.1, 0.0},
              {0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.1}};
  return p;
}

inline capmt_oracle::Mat small_conventional_features() {
  return {{1.0, 0.5, -0.25, 0.0}, {-0.5, 1.25, 0.75, -1.0}, {0.25, -0.75, 1.0, 0.5}};
}

}  // namespace capmt_test
