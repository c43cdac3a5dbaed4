#pragma once

#include <cstddef>
#include <vector>

namespace iic {

// Dense T x H x W x C volume, channel-last, double precision.
struct Volume {
  int t = 0, h = 0, w = 0, c = 0;
  std::vector<double> data;

  Volume() = default;
  Volume(int t_, int h_, int w_, int c_)
      : t(t_), h(h_), w(w_), c(c_),
        data(static_cast<std::size_t>(t_) * h_ * w_ * c_, 0.0) {}

  std::size_t index(int ti, int hi, int wi, int ci) const {
    return ((static_cast<std::size_t>(ti) * h + hi) * w + wi) *
               static_cast<std::size_t>(c) +
           ci;
  }
  double& at(int ti, int hi, int wi, int ci) {
    return data[index(ti, hi, wi, ci)];
  }
  double at(int ti, int hi, int wi, int ci) const {
    return data[index(ti, hi, wi, ci)];
  }

  std::size_t size() const { return data.size(); }
  std::size_t frame_size() const {
    return static_cast<std::size_t>(h) * w * c;
  }

  bool same_shape(const Volume& o) const {
    return t == o.t && h == o.h && w == o.w && c == o.c;
  }
};

}  // namespace iic
