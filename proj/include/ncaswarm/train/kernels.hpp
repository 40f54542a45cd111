#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ncaswarm/model/model.hpp"

namespace ncaswarm::train {

// Offsets of each weight tensor inside one flat parameter vector.
struct ParamLayout {
  std::size_t c = 0, h = 0, pk = 0;
  std::size_t R = 0, C = 0;
  bool head = false;
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, wc = 0, total = 0;

  static ParamLayout for_model(const model::NcaModel& m);
};

template <class T>
std::vector<T> pack_params(const model::NcaModel& m);
void unpack_params(const std::vector<float>& flat, model::NcaModel& m);

// Alive cells of a batch flattened into rows. Dead cells never appear:
// they read as zeros and never change.
struct BatchGraph {
  std::size_t rows = 0;
  std::vector<std::int32_t> neighbors;  // rows x 4, world N/E/S/W, -1 if absent
  std::vector<std::uint8_t> turns;      // rows, quarter turns of theta
  std::vector<std::uint32_t> sample_of_row;
  std::vector<std::uint32_t> sample_begin;  // samples + 1 entries
  std::vector<int> labels;                  // per sample

  std::size_t samples() const noexcept { return labels.size(); }
  std::int32_t neighbor(std::size_t row, int dir) const noexcept { return neighbors[row * 4 + static_cast<std::size_t>(dir)]; }
};

// Builds rows for one sample given its alive mask and theta map over a W x H grid
// (row-major, y southwards) and appends them to `g`. Returns the grid index of
// each appended row.
std::vector<std::uint32_t> append_sample(BatchGraph& g, int width, int height, const std::uint8_t* alive,
                                         const std::uint8_t* turns, int label);

enum class Engine { Reference, Parallel };

// Stochastic parts of one update step. Dropout keeps a row's whole update with
// probability 1 - dropout; noise is added to every alive row regardless.
struct StepNoise {
  float dropout = 0.0f;
  float sigma = 0.0f;
  std::uint64_t key = 0;
};

bool dropout_keep(const StepNoise& n, std::size_t row) noexcept;
// Fills rows x c Gaussian noise (zero when sigma is 0).
template <class T>
void fill_noise(const StepNoise& n, std::size_t rows, std::size_t c, T* out);

template <class T>
struct StepTape {
  std::vector<T> p;            // rows x pk, rotated perception
  std::vector<T> hid;          // rows x h, post-ReLU
  std::vector<std::uint8_t> keep;
};

struct KernelContext {
  const model::KernelSet* kernels = nullptr;
  ParamLayout layout;
  Engine engine = Engine::Parallel;
};

template <class T>
void forward_step(const KernelContext& ctx, const BatchGraph& g, const T* params, const T* s_in, T* s_out,
                  const StepNoise& noise, StepTape<T>* tape);

inline constexpr std::size_t kChunkRows = 256;

// Accumulates weight gradients. The Parallel engine sums into one buffer per
// fixed-size row chunk and reduces them in chunk order, so results do not
// depend on the thread count.
template <class T>
class GradAccumulator {
 public:
  GradAccumulator(std::size_t params, std::size_t chunks);
  // One chunk for the Reference engine, one per kChunkRows rows otherwise.
  static GradAccumulator for_engine(Engine e, std::size_t params, std::size_t rows);
  T* chunk(std::size_t index) noexcept { return buf_.data() + index * params_; }
  std::size_t chunks() const noexcept { return chunks_; }
  void reduce(T* out) const;

 private:
  std::size_t params_, chunks_;
  std::vector<T> buf_;
};

// ds_next is the gradient w.r.t. s_{t+1}; writes the gradient w.r.t. s_t into
// ds_prev (channel 0 carries none, it is clamped).
template <class T>
void backward_step(const KernelContext& ctx, const BatchGraph& g, const T* params, const StepTape<T>& tape,
                   const T* ds_next, T* ds_prev, GradAccumulator<T>& acc);

// Classification outputs for every row (rows x C).
template <class T>
void classify_rows(const ParamLayout& L, const BatchGraph& g, const T* params, const T* s, T* out);

// Mean over samples of the per-sample mean over alive cells of the summed
// squared error. Writes dL/ds into ds (rows x c, zero outside read channels)
// and dL/dW_C into grad (when a head exists). Per-sample losses optional.
template <class T>
T loss_and_output_grad(const ParamLayout& L, const BatchGraph& g, const T* params, const T* s, T* ds, T* grad,
                       std::vector<T>* per_sample = nullptr);

struct RolloutNoise {
  float dropout = 0.0f;
  float sigma = 0.0f;
  std::uint64_t key = 0;  // step t uses derive_key(key, t)
  StepNoise at(std::size_t step) const noexcept;
};

// Full forward + BPTT. s holds the initial state (rows x c) and receives the
// final one. grad receives dL/dparams (size layout.total). Returns the loss.
template <class T>
T loss_and_gradient(const KernelContext& ctx, const BatchGraph& g, const T* params, std::vector<T>& s,
                    std::size_t steps, const RolloutNoise& noise, std::vector<T>& grad,
                    std::vector<T>* per_sample = nullptr);

// Forward only.
template <class T>
void rollout(const KernelContext& ctx, const BatchGraph& g, const T* params, std::vector<T>& s, std::size_t steps,
             const RolloutNoise& noise, std::size_t first_step = 0);

}  // namespace ncaswarm::train
