#pragma once

// Row helpers shared by the reference and parallel kernels. Internal to the
// library; only additions and sign flips, so contraction flags do not matter.
#include "ncaswarm/train/kernels.hpp"

namespace ncaswarm::train::detail {

using model::Kernel;
using model::Rotation;

template <class T>
inline void perceive_row(const model::KernelSet& ks, const BatchGraph& g, std::size_t c, const T* s, std::size_t r, T* p) {
  auto nb = [&](int dir) -> const T* {
    const auto n = g.neighbor(r, dir);
    return n < 0 ? nullptr : s + static_cast<std::size_t>(n) * c;
  };
  const T* self = s + r * c;
  const T* dn = nb(model::North);
  const T* de = nb(model::East);
  const T* ds = nb(model::South);
  const T* dw = nb(model::West);
  auto v = [](const T* q, std::size_t ch) { return q ? q[ch] : T(0); };
  const auto& list = ks.kernels();
  for (std::size_t k = 0; k < list.size(); ++k) {
    T* out = p + k * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      switch (list[k]) {
        case Kernel::Identity: out[ch] = self[ch]; break;
        case Kernel::GradientX: out[ch] = v(de, ch) - v(dw, ch); break;
        case Kernel::GradientY: out[ch] = v(dn, ch) - v(ds, ch); break;
        case Kernel::VonNeumann: out[ch] = v(dn, ch) + v(de, ch) + v(ds, ch) + v(dw, ch); break;
      }
    }
  }
  if (ks.gradient_x()) {
    T* gx = p + *ks.gradient_x() * c;
    T* gy = p + *ks.gradient_y() * c;
    const Rotation rot{g.turns[r]};
    for (std::size_t ch = 0; ch < c; ++ch) model::rotate_gradient(rot, gx[ch], gy[ch], gx[ch], gy[ch]);
  }
}

// Turns dL/dP of one row (rotated frame) into the world frame in place.
template <class T>
inline void unrotate_row(const model::KernelSet& ks, std::size_t c, std::uint8_t turns, T* dp) {
  if (!ks.gradient_x()) return;
  T* gx = dp + *ks.gradient_x() * c;
  T* gy = dp + *ks.gradient_y() * c;
  const Rotation inverse{static_cast<std::uint8_t>((4u - turns) & 3u)};
  for (std::size_t ch = 0; ch < c; ++ch) model::rotate_gradient(inverse, gx[ch], gy[ch], gx[ch], gy[ch]);
}

// dL/ds_t for row q: direct path plus what each perception read of s_t[q]
// receives back. Gradients are gathered from neighbours, so rows never race.
template <class T>
inline void gather_row(const model::KernelSet& ks, const BatchGraph& g, std::size_t c, const T* dp, const T* ds_next,
                std::size_t q, T* ds_prev) {
  const std::size_t pk = ks.size() * c;
  T* out = ds_prev + q * c;
  for (std::size_t ch = 0; ch < c; ++ch) out[ch] = ds_next[q * c + ch];
  auto nb = [&](int dir) -> const T* {
    const auto n = g.neighbor(q, dir);
    return n < 0 ? nullptr : dp + static_cast<std::size_t>(n) * pk;
  };
  const T* from_n = nb(model::North);
  const T* from_e = nb(model::East);
  const T* from_s = nb(model::South);
  const T* from_w = nb(model::West);
  const auto& list = ks.kernels();
  for (std::size_t k = 0; k < list.size(); ++k) {
    const std::size_t off = k * c;
    switch (list[k]) {
      case Kernel::Identity:
        for (std::size_t ch = 0; ch < c; ++ch) out[ch] += dp[q * pk + off + ch];
        break;
      case Kernel::GradientX:
        // q is the East neighbour of its West neighbour and vice versa.
        if (from_w) for (std::size_t ch = 0; ch < c; ++ch) out[ch] += from_w[off + ch];
        if (from_e) for (std::size_t ch = 0; ch < c; ++ch) out[ch] -= from_e[off + ch];
        break;
      case Kernel::GradientY:
        if (from_s) for (std::size_t ch = 0; ch < c; ++ch) out[ch] += from_s[off + ch];
        if (from_n) for (std::size_t ch = 0; ch < c; ++ch) out[ch] -= from_n[off + ch];
        break;
      case Kernel::VonNeumann:
        for (const T* src : {from_n, from_e, from_s, from_w})
          if (src) for (std::size_t ch = 0; ch < c; ++ch) out[ch] += src[off + ch];
        break;
    }
  }
  out[0] = T(0);
}

template <class T>
void forward_reference(const KernelContext& ctx, const BatchGraph& g, const T* params, const T* s_in, T* s_out,
                       const StepNoise& noise, StepTape<T>* tape);

template <class T>
void backward_reference(const KernelContext& ctx, const BatchGraph& g, const T* params, const StepTape<T>& tape,
                        const T* ds_next, T* ds_prev, GradAccumulator<T>& acc);

}  // namespace ncaswarm::train::detail
