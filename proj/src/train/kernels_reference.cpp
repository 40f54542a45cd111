// Serial reference kernels. Built without floating-point contraction so the
// forward pass rounds exactly like the VM.
#include <vector>

#include "kernel_rows.hpp"

namespace ncaswarm::train::detail {

template <class T>
void forward_reference(const KernelContext& ctx, const BatchGraph& g, const T* params, const T* s_in, T* s_out,
                       const StepNoise& noise, StepTape<T>* tape) {
  const auto& L = ctx.layout;
  const std::size_t c = L.c, h = L.h, pk = L.pk;
  std::vector<T> p(pk), hid(h), eps(g.rows * c);
  fill_noise(noise, g.rows, c, eps.data());
  const T* w1 = params + L.w1;
  const T* b1 = params + L.b1;
  const T* w2 = params + L.w2;
  const T* b2 = params + L.b2;
  for (std::size_t r = 0; r < g.rows; ++r) {
    perceive_row(*ctx.kernels, g, c, s_in, r, p.data());
    for (std::size_t j = 0; j < h; ++j) {
      T acc = 0;
      for (std::size_t i = 0; i < pk; ++i) acc += p[i] * w1[i * h + j];
      const T z = acc + b1[j];
      hid[j] = z > T(0) ? z : T(0);
    }
    const bool keep = dropout_keep(noise, r);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc = 0;
      for (std::size_t j = 0; j < h; ++j) acc += hid[j] * w2[j * c + ch];
      const T delta = keep ? acc + b2[ch] : T(0);
      s_out[r * c + ch] = s_in[r * c + ch] + (delta + eps[r * c + ch]);
    }
    s_out[r * c] = T(1);
    if (tape) {
      std::copy(p.begin(), p.end(), tape->p.begin() + static_cast<std::ptrdiff_t>(r * pk));
      std::copy(hid.begin(), hid.end(), tape->hid.begin() + static_cast<std::ptrdiff_t>(r * h));
      tape->keep[r] = keep;
    }
  }
}

template <class T>
void backward_reference(const KernelContext& ctx, const BatchGraph& g, const T* params, const StepTape<T>& tape,
                        const T* ds_next, T* ds_prev, GradAccumulator<T>& acc) {
  const auto& L = ctx.layout;
  const std::size_t c = L.c, h = L.h, pk = L.pk;
  const T* w1 = params + L.w1;
  const T* w2 = params + L.w2;
  T* grad = acc.chunk(0);
  std::vector<T> dp(g.rows * pk), dd(c), dz(h);
  for (std::size_t r = 0; r < g.rows; ++r) {
    const T* p = tape.p.data() + r * pk;
    const T* hid = tape.hid.data() + r * h;
    for (std::size_t ch = 0; ch < c; ++ch) dd[ch] = (tape.keep[r] && ch > 0) ? ds_next[r * c + ch] : T(0);
    for (std::size_t ch = 0; ch < c; ++ch) grad[L.b2 + ch] += dd[ch];
    for (std::size_t j = 0; j < h; ++j) {
      T acc_h = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        grad[L.w2 + j * c + ch] += hid[j] * dd[ch];
        acc_h += dd[ch] * w2[j * c + ch];
      }
      dz[j] = hid[j] > T(0) ? acc_h : T(0);
      grad[L.b1 + j] += dz[j];
    }
    T* dpr = dp.data() + r * pk;
    for (std::size_t i = 0; i < pk; ++i) {
      T acc_p = 0;
      for (std::size_t j = 0; j < h; ++j) {
        grad[L.w1 + i * h + j] += p[i] * dz[j];
        acc_p += dz[j] * w1[i * h + j];
      }
      dpr[i] = acc_p;
    }
    unrotate_row(*ctx.kernels, c, g.turns[r], dpr);
  }
  std::vector<T> ds_clean(ds_next, ds_next + g.rows * c);
  for (std::size_t r = 0; r < g.rows; ++r) ds_clean[r * c] = T(0);
  for (std::size_t q = 0; q < g.rows; ++q) gather_row(*ctx.kernels, g, c, dp.data(), ds_clean.data(), q, ds_prev);
}

template void forward_reference<float>(const KernelContext&, const BatchGraph&, const float*, const float*, float*,
                                       const StepNoise&, StepTape<float>*);
template void forward_reference<double>(const KernelContext&, const BatchGraph&, const double*, const double*,
                                        double*, const StepNoise&, StepTape<double>*);
template void backward_reference<float>(const KernelContext&, const BatchGraph&, const float*,
                                        const StepTape<float>&, const float*, float*, GradAccumulator<float>&);
template void backward_reference<double>(const KernelContext&, const BatchGraph&, const double*,
                                         const StepTape<double>&, const double*, double*, GradAccumulator<double>&);

}  // namespace ncaswarm::train::detail
