#pragma once

#include <string>
#include <vector>

namespace glab::harness {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;  // non-positive values are dropped
  std::vector<Series> series;

  std::string render(int width = 640, int height = 400) const;
};

}  // namespace glab::harness
