#define EIGEN_DONT_PARALLELIZE
#include "ncaswarm/train/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "ncaswarm/rng.hpp"
#include "kernel_rows.hpp"

namespace ncaswarm::train {

using model::Kernel;
using model::Rotation;

ParamLayout ParamLayout::for_model(const model::NcaModel& m) {
  ParamLayout L;
  L.c = m.channels;
  L.h = m.hidden;
  L.pk = m.perception_size();
  L.C = m.classes;
  L.head = m.head.has_value();
  L.R = L.head ? m.head->inputs : 0;
  L.w1 = 0;
  L.b1 = L.w1 + L.pk * L.h;
  L.w2 = L.b1 + L.h;
  L.b2 = L.w2 + L.h * L.c;
  L.wc = L.b2 + L.c;
  L.total = L.wc + L.R * L.C;
  return L;
}

template <class T>
std::vector<T> pack_params(const model::NcaModel& m) {
  const auto L = ParamLayout::for_model(m);
  std::vector<T> flat(L.total);
  std::copy(m.w1.begin(), m.w1.end(), flat.begin() + static_cast<std::ptrdiff_t>(L.w1));
  std::copy(m.b1.begin(), m.b1.end(), flat.begin() + static_cast<std::ptrdiff_t>(L.b1));
  std::copy(m.w2.begin(), m.w2.end(), flat.begin() + static_cast<std::ptrdiff_t>(L.w2));
  std::copy(m.b2.begin(), m.b2.end(), flat.begin() + static_cast<std::ptrdiff_t>(L.b2));
  if (m.head) std::copy(m.head->weights.begin(), m.head->weights.end(), flat.begin() + static_cast<std::ptrdiff_t>(L.wc));
  return flat;
}

template std::vector<float> pack_params<float>(const model::NcaModel&);
template std::vector<double> pack_params<double>(const model::NcaModel&);

void unpack_params(const std::vector<float>& flat, model::NcaModel& m) {
  const auto L = ParamLayout::for_model(m);
  auto slice = [&](std::size_t off, std::size_t n) {
    return std::vector<float>(flat.begin() + static_cast<std::ptrdiff_t>(off),
                              flat.begin() + static_cast<std::ptrdiff_t>(off + n));
  };
  m.w1 = slice(L.w1, L.pk * L.h);
  m.b1 = slice(L.b1, L.h);
  m.w2 = slice(L.w2, L.h * L.c);
  m.b2 = slice(L.b2, L.c);
  if (m.head) m.head->weights = slice(L.wc, L.R * L.C);
}

std::vector<std::uint32_t> append_sample(BatchGraph& g, int width, int height, const std::uint8_t* alive,
                                         const std::uint8_t* turns, int label) {
  static constexpr int dx[4] = {0, 1, 0, -1};
  static constexpr int dy[4] = {-1, 0, 1, 0};
  if (g.sample_begin.empty()) g.sample_begin.push_back(0);
  const auto cells = static_cast<std::size_t>(width * height);
  std::vector<std::int32_t> row_of(cells, -1);
  std::vector<std::uint32_t> grid_index;
  const auto base = static_cast<std::int32_t>(g.rows);
  for (std::size_t i = 0; i < cells; ++i) {
    if (!alive[i]) continue;
    row_of[i] = base + static_cast<std::int32_t>(grid_index.size());
    grid_index.push_back(static_cast<std::uint32_t>(i));
  }
  const auto sample = static_cast<std::uint32_t>(g.labels.size());
  for (auto idx : grid_index) {
    const int x = static_cast<int>(idx) % width, y = static_cast<int>(idx) / width;
    for (int d = 0; d < 4; ++d) {
      const int nx = x + dx[d], ny = y + dy[d];
      const bool inside = nx >= 0 && nx < width && ny >= 0 && ny < height;
      g.neighbors.push_back(inside ? row_of[static_cast<std::size_t>(ny * width + nx)] : -1);
    }
    g.turns.push_back(turns ? static_cast<std::uint8_t>(turns[idx] & 3u) : 0);
    g.sample_of_row.push_back(sample);
  }
  g.rows += grid_index.size();
  g.labels.push_back(label);
  g.sample_begin.push_back(static_cast<std::uint32_t>(g.rows));
  return grid_index;
}

bool dropout_keep(const StepNoise& n, std::size_t row) noexcept {
  if (n.dropout <= 0.0f) return true;
  const auto bits = CounterRng::at(derive_key(n.key, 1), row);
  const float u = static_cast<float>(bits >> 40) * 0x1.0p-24f;
  return u >= n.dropout;
}

template <class T>
void fill_noise(const StepNoise& n, std::size_t rows, std::size_t c, T* out) {
  const std::size_t count = rows * c;
  if (n.sigma == 0.0f) {
    std::fill(out, out + count, T(0));
    return;
  }
  const auto key = derive_key(n.key, 2);
  for (std::size_t e = 0; e < count; ++e) {
    const auto bits = CounterRng::at(key, e);
    const double u1 = (static_cast<double>(bits >> 32) + 1.0) * 0x1.0p-32;
    const double u2 = static_cast<double>(bits & 0xffffffffu) * 0x1.0p-32;
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    out[e] = static_cast<T>(static_cast<float>(z * n.sigma));
  }
}

template void fill_noise<float>(const StepNoise&, std::size_t, std::size_t, float*);
template void fill_noise<double>(const StepNoise&, std::size_t, std::size_t, double*);

StepNoise RolloutNoise::at(std::size_t step) const noexcept { return {dropout, sigma, derive_key(key, step)}; }

namespace {

using detail::gather_row;
using detail::perceive_row;
using detail::unrotate_row;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;

template <class T>
void forward_parallel(const KernelContext& ctx, const BatchGraph& g, const T* params, const T* s_in, T* s_out,
                      const StepNoise& noise, StepTape<T>* tape) {
  const auto& L = ctx.layout;
  const std::size_t c = L.c, h = L.h, pk = L.pk;
  const std::size_t chunks = (g.rows + kChunkRows - 1) / kChunkRows;
  const CMap<T> w1(params + L.w1, static_cast<Eigen::Index>(pk), static_cast<Eigen::Index>(h));
  const CMap<T> w2(params + L.w2, static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(c));
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b1(params + L.b1, static_cast<Eigen::Index>(h));
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b2(params + L.b2, static_cast<Eigen::Index>(c));
  std::vector<T> eps(g.rows * c);
  fill_noise(noise, g.rows, c, eps.data());

#pragma omp parallel
  {
    std::vector<T> p_local, h_local;
    RowMat<T> d;
#pragma omp for schedule(static)
    for (std::size_t ci = 0; ci < chunks; ++ci) {
      const std::size_t r0 = ci * kChunkRows, r1 = std::min(g.rows, r0 + kChunkRows), n = r1 - r0;
      T* p;
      T* hid;
      if (tape) {
        p = tape->p.data() + r0 * pk;
        hid = tape->hid.data() + r0 * h;
      } else {
        p_local.resize(n * pk);
        h_local.resize(n * h);
        p = p_local.data();
        hid = h_local.data();
      }
      for (std::size_t r = r0; r < r1; ++r) perceive_row(*ctx.kernels, g, c, s_in, r, p + (r - r0) * pk);
      const auto rows = static_cast<Eigen::Index>(n);
      CMap<T> pm(p, rows, static_cast<Eigen::Index>(pk));
      Map<T> hm(hid, rows, static_cast<Eigen::Index>(h));
      hm.noalias() = pm * w1;
      hm.rowwise() += b1;
      hm = hm.cwiseMax(T(0));
      d.noalias() = hm * w2;
      d.rowwise() += b2;
      for (std::size_t r = r0; r < r1; ++r) {
        const bool keep = dropout_keep(noise, r);
        if (tape) tape->keep[r] = keep;
        const T* dr = d.data() + (r - r0) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T delta = keep ? dr[ch] : T(0);
          s_out[r * c + ch] = s_in[r * c + ch] + (delta + eps[r * c + ch]);
        }
        s_out[r * c] = T(1);
      }
    }
  }
}

template <class T>
void backward_parallel(const KernelContext& ctx, const BatchGraph& g, const T* params, const StepTape<T>& tape,
                       const T* ds_next, T* ds_prev, GradAccumulator<T>& acc) {
  const auto& L = ctx.layout;
  const std::size_t c = L.c, h = L.h, pk = L.pk;
  const std::size_t chunks = (g.rows + kChunkRows - 1) / kChunkRows;
  const CMap<T> w1(params + L.w1, static_cast<Eigen::Index>(pk), static_cast<Eigen::Index>(h));
  const CMap<T> w2(params + L.w2, static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(c));
  std::vector<T> dp(g.rows * pk);
  std::vector<T> ds_clean(g.rows * c);

#pragma omp parallel
  {
    RowMat<T> dd, dz;
#pragma omp for schedule(static)
    for (std::size_t ci = 0; ci < chunks; ++ci) {
      const std::size_t r0 = ci * kChunkRows, r1 = std::min(g.rows, r0 + kChunkRows), n = r1 - r0;
      const auto rows = static_cast<Eigen::Index>(n);
      T* grad = acc.chunk(ci);
      dd.resize(rows, static_cast<Eigen::Index>(c));
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T v = ch > 0 ? ds_next[r * c + ch] : T(0);
          ds_clean[r * c + ch] = v;
          dd(static_cast<Eigen::Index>(r - r0), static_cast<Eigen::Index>(ch)) = tape.keep[r] ? v : T(0);
        }
      }
      CMap<T> pm(tape.p.data() + r0 * pk, rows, static_cast<Eigen::Index>(pk));
      CMap<T> hm(tape.hid.data() + r0 * h, rows, static_cast<Eigen::Index>(h));
      Map<T> gw2(grad + L.w2, static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(c));
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb2(grad + L.b2, static_cast<Eigen::Index>(c));
      Map<T> gw1(grad + L.w1, static_cast<Eigen::Index>(pk), static_cast<Eigen::Index>(h));
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb1(grad + L.b1, static_cast<Eigen::Index>(h));
      gw2.noalias() += hm.transpose() * dd;
      gb2 += dd.colwise().sum();
      dz.noalias() = dd * w2.transpose();
      dz = (hm.array() > T(0)).select(dz, T(0));
      gb1 += dz.colwise().sum();
      gw1.noalias() += pm.transpose() * dz;
      Map<T> dpm(dp.data() + r0 * pk, rows, static_cast<Eigen::Index>(pk));
      dpm.noalias() = dz * w1.transpose();
      for (std::size_t r = r0; r < r1; ++r) unrotate_row(*ctx.kernels, c, g.turns[r], dp.data() + r * pk);
    }
#pragma omp for schedule(static)
    for (std::size_t ci = 0; ci < chunks; ++ci) {
      const std::size_t r0 = ci * kChunkRows, r1 = std::min(g.rows, r0 + kChunkRows);
      for (std::size_t q = r0; q < r1; ++q) gather_row(*ctx.kernels, g, c, dp.data(), ds_clean.data(), q, ds_prev);
    }
  }
}

template <class T>
StepTape<T> make_tape(const ParamLayout& L, std::size_t rows) {
  StepTape<T> t;
  t.p.resize(rows * L.pk);
  t.hid.resize(rows * L.h);
  t.keep.resize(rows);
  return t;
}

}  // namespace

template <class T>
GradAccumulator<T>::GradAccumulator(std::size_t params, std::size_t chunks)
    : params_(params), chunks_(std::max<std::size_t>(chunks, 1)), buf_(params_ * chunks_, T(0)) {}

template <class T>
GradAccumulator<T> GradAccumulator<T>::for_engine(Engine e, std::size_t params, std::size_t rows) {
  return GradAccumulator(params, e == Engine::Reference ? 1 : (rows + kChunkRows - 1) / kChunkRows);
}

template <class T>
void GradAccumulator<T>::reduce(T* out) const {
  std::fill(out, out + params_, T(0));
  for (std::size_t k = 0; k < chunks_; ++k)
    for (std::size_t i = 0; i < params_; ++i) out[i] += buf_[k * params_ + i];
}

template class GradAccumulator<float>;
template class GradAccumulator<double>;

template <class T>
void forward_step(const KernelContext& ctx, const BatchGraph& g, const T* params, const T* s_in, T* s_out,
                  const StepNoise& noise, StepTape<T>* tape) {
  if (ctx.engine == Engine::Reference)
    detail::forward_reference(ctx, g, params, s_in, s_out, noise, tape);
  else
    forward_parallel(ctx, g, params, s_in, s_out, noise, tape);
}

template <class T>
void backward_step(const KernelContext& ctx, const BatchGraph& g, const T* params, const StepTape<T>& tape,
                   const T* ds_next, T* ds_prev, GradAccumulator<T>& acc) {
  if (ctx.engine == Engine::Reference)
    detail::backward_reference(ctx, g, params, tape, ds_next, ds_prev, acc);
  else
    backward_parallel(ctx, g, params, tape, ds_next, ds_prev, acc);
}

template <class T>
void classify_rows(const ParamLayout& L, const BatchGraph& g, const T* params, const T* s, T* out) {
  for (std::size_t r = 0; r < g.rows; ++r) {
    const T* sr = s + r * L.c;
    T* o = out + r * L.C;
    if (L.head) {
      const T* wc = params + L.wc;
      for (std::size_t j = 0; j < L.C; ++j) {
        T acc = 0;
        for (std::size_t i = 0; i < L.R; ++i) acc += sr[i] * wc[i * L.C + j];
        o[j] = acc;
      }
    } else {
      for (std::size_t j = 0; j < L.C; ++j) o[j] = sr[1 + j];
    }
  }
}

template <class T>
T loss_and_output_grad(const ParamLayout& L, const BatchGraph& g, const T* params, const T* s, T* ds, T* grad,
                       std::vector<T>* per_sample) {
  std::vector<T> o(g.rows * L.C);
  classify_rows(L, g, params, s, o.data());
  std::fill(ds, ds + g.rows * L.c, T(0));
  if (per_sample) per_sample->assign(g.samples(), T(0));
  const T batch = static_cast<T>(g.samples());
  T total = 0;
  std::vector<T> dout(L.C);
  for (std::size_t b = 0; b < g.samples(); ++b) {
    const std::size_t r0 = g.sample_begin[b], r1 = g.sample_begin[b + 1];
    if (r1 == r0) continue;
    const T n = static_cast<T>(r1 - r0);
    T sample_loss = 0;
    for (std::size_t r = r0; r < r1; ++r) {
      T err = 0;
      for (std::size_t j = 0; j < L.C; ++j) {
        const T diff = o[r * L.C + j] - (static_cast<int>(j) == g.labels[b] ? T(1) : T(0));
        err += diff * diff;
        dout[j] = T(2) * diff / (n * batch);
      }
      sample_loss += err;
      T* dsr = ds + r * L.c;
      const T* sr = s + r * L.c;
      if (L.head) {
        const T* wc = params + L.wc;
        for (std::size_t i = 0; i < L.R; ++i) {
          T acc = 0;
          for (std::size_t j = 0; j < L.C; ++j) {
            acc += dout[j] * wc[i * L.C + j];
            grad[L.wc + i * L.C + j] += sr[i] * dout[j];
          }
          dsr[i] = acc;
        }
      } else {
        for (std::size_t j = 0; j < L.C; ++j) dsr[1 + j] = dout[j];
      }
    }
    sample_loss /= n;
    if (per_sample) (*per_sample)[b] = sample_loss;
    total += sample_loss;
  }
  return total / batch;
}

template <class T>
void rollout(const KernelContext& ctx, const BatchGraph& g, const T* params, std::vector<T>& s, std::size_t steps,
             const RolloutNoise& noise, std::size_t first_step) {
  std::vector<T> next(s.size());
  for (std::size_t t = 0; t < steps; ++t) {
    forward_step<T>(ctx, g, params, s.data(), next.data(), noise.at(first_step + t), nullptr);
    s.swap(next);
  }
}

template <class T>
T loss_and_gradient(const KernelContext& ctx, const BatchGraph& g, const T* params, std::vector<T>& s,
                    std::size_t steps, const RolloutNoise& noise, std::vector<T>& grad, std::vector<T>* per_sample) {
  const auto& L = ctx.layout;
  const std::size_t n = g.rows * L.c;
  std::vector<std::vector<T>> states(steps + 1);
  std::vector<StepTape<T>> tapes;
  tapes.reserve(steps);
  states[0] = s;
  for (std::size_t t = 0; t < steps; ++t) {
    states[t + 1].resize(n);
    tapes.push_back(make_tape<T>(L, g.rows));
    forward_step<T>(ctx, g, params, states[t].data(), states[t + 1].data(), noise.at(t), &tapes.back());
  }
  grad.assign(L.total, T(0));
  std::vector<T> ds(n), ds_prev(n);
  const T loss = loss_and_output_grad(L, g, params, states[steps].data(), ds.data(), grad.data(), per_sample);
  auto acc = GradAccumulator<T>::for_engine(ctx.engine, L.total, g.rows);
  for (std::size_t t = steps; t-- > 0;) {
    backward_step<T>(ctx, g, params, tapes[t], ds.data(), ds_prev.data(), acc);
    ds.swap(ds_prev);
    tapes[t] = {};
  }
  std::vector<T> weights(L.total);
  acc.reduce(weights.data());
  for (std::size_t i = 0; i < L.total; ++i) grad[i] += weights[i];
  s = std::move(states[steps]);
  return loss;
}

#define NCASWARM_INSTANTIATE(T)                                                                              \
  template void forward_step<T>(const KernelContext&, const BatchGraph&, const T*, const T*, T*,               \
                                const StepNoise&, StepTape<T>*);                                              \
  template void backward_step<T>(const KernelContext&, const BatchGraph&, const T*, const StepTape<T>&,        \
                                 const T*, T*, GradAccumulator<T>&);                                          \
  template void classify_rows<T>(const ParamLayout&, const BatchGraph&, const T*, const T*, T*);               \
  template T loss_and_output_grad<T>(const ParamLayout&, const BatchGraph&, const T*, const T*, T*, T*,        \
                                     std::vector<T>*);                                                        \
  template void rollout<T>(const KernelContext&, const BatchGraph&, const T*, std::vector<T>&, std::size_t,    \
                           const RolloutNoise&, std::size_t);                                                 \
  template T loss_and_gradient<T>(const KernelContext&, const BatchGraph&, const T*, std::vector<T>&,          \
                                  std::size_t, const RolloutNoise&, std::vector<T>&, std::vector<T>*);

NCASWARM_INSTANTIATE(float)
NCASWARM_INSTANTIATE(double)

#undef NCASWARM_INSTANTIATE

}  // namespace ncaswarm::train
