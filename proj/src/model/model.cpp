#include "ncaswarm/model/model.hpp"

#include <algorithm>
#include <cmath>

#include "ncaswarm/vm/program.hpp"

namespace ncaswarm::model {

std::string to_string(Kernel k) {
  switch (k) {
    case Kernel::Identity: return "identity";
    case Kernel::GradientX: return "gradient_x";
    case Kernel::GradientY: return "gradient_y";
    case Kernel::VonNeumann: return "von_neumann";
  }
  return "?";
}

Kernel kernel_from_string(const std::string& name) {
  if (name == "identity") return Kernel::Identity;
  if (name == "gradient_x") return Kernel::GradientX;
  if (name == "gradient_y") return Kernel::GradientY;
  if (name == "von_neumann") return Kernel::VonNeumann;
  throw ModelError("unknown kernel '" + name + "'");
}

Rotation Rotation::from_degrees(int degrees) {
  if (degrees % 90 != 0) throw ModelError("rotation must be a multiple of 90 degrees");
  return Rotation{static_cast<std::uint8_t>(((degrees / 90) % 4 + 4) % 4)};
}

KernelSet::KernelSet(std::vector<Kernel> kernels) : kernels_(std::move(kernels)) {
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    if (std::count(kernels_.begin(), kernels_.end(), kernels_[i]) > 1)
      throw ModelError("kernel listed twice: " + to_string(kernels_[i]));
    if (kernels_[i] == Kernel::GradientX) gx_ = i;
    if (kernels_[i] == Kernel::GradientY) gy_ = i;
  }
  if (gx_.has_value() != gy_.has_value()) throw ModelError("gradient_x and gradient_y must be used together");
}

void NcaModel::validate() const {
  const std::size_t pk = perception_size();
  if (channels == 0 || hidden == 0 || kernels.size() == 0) throw ModelError("model dimensions must be positive");
  if (w1.size() != pk * hidden || b1.size() != hidden || w2.size() != hidden * channels || b2.size() != channels)
    throw ModelError("layer weights do not match (c, h, kernels)");
  if (classes == 0) throw ModelError("model needs at least one class");
  if (glyphs.size() != classes * vm::kOutputLength) throw ModelError("glyph table must be C x 75");
  if (head) {
    if (head->inputs == 0 || head->inputs > channels) throw ModelError("head input count R must be in [1, c]");
    if (head->classes != classes || head->weights.size() != head->inputs * classes)
      throw ModelError("head weights must be R x C");
  } else if (classes + 1 > channels) {
    throw ModelError("without a head the state needs C + 1 channels");
  }
  auto finite = [](const std::vector<float>& v) { return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); }); };
  if (!finite(w1) || !finite(b1) || !finite(w2) || !finite(b2) || (head && !finite(head->weights)))
    throw ModelError("model weights must be finite");
}

NcaModel NcaModel::zeros(std::size_t channels, std::size_t hidden, KernelSet kernels, std::size_t classes,
                         std::optional<std::size_t> head_inputs) {
  NcaModel m;
  m.channels = channels;
  m.hidden = hidden;
  m.kernels = std::move(kernels);
  m.w1.assign(m.perception_size() * hidden, 0.0f);
  m.b1.assign(hidden, 0.0f);
  m.w2.assign(hidden * channels, 0.0f);
  m.b2.assign(channels, 0.0f);
  m.classes = classes;
  m.glyphs.assign(classes * vm::kOutputLength, 0.0f);
  if (head_inputs) m.head = ClassificationHead{*head_inputs, classes, std::vector<float>(*head_inputs * classes, 0.0f)};
  return m;
}

CellState CellState::seed(std::size_t c, Rotation theta) {
  CellState s;
  s.channels.assign(c, 0.0f);
  s.channels[0] = 1.0f;
  s.theta = theta;
  s.alive = true;
  return s;
}

CellState CellState::dead(std::size_t c) {
  CellState s;
  s.channels.assign(c, 0.0f);
  return s;
}

std::vector<float> perceive(const KernelSet& kernels, std::span<const float> self, const NeighborView& neighbors,
                            Rotation theta) {
  const std::size_t c = self.size();
  auto at = [&](int dir, std::size_t ch) -> float { return neighbors[dir] ? (*neighbors[dir])[ch] : 0.0f; };
  std::vector<float> p(kernels.size() * c, 0.0f);
  for (std::size_t k = 0; k < kernels.size(); ++k) {
    float* out = p.data() + k * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      switch (kernels.kernels()[k]) {
        case Kernel::Identity: out[ch] = self[ch]; break;
        case Kernel::GradientX: out[ch] = at(East, ch) - at(West, ch); break;
        case Kernel::GradientY: out[ch] = at(North, ch) - at(South, ch); break;
        case Kernel::VonNeumann: out[ch] = at(North, ch) + at(East, ch) + at(South, ch) + at(West, ch); break;
      }
    }
  }
  if (kernels.gradient_x()) {
    float* gx = p.data() + *kernels.gradient_x() * c;
    float* gy = p.data() + *kernels.gradient_y() * c;
    for (std::size_t ch = 0; ch < c; ++ch) rotate_gradient(theta, gx[ch], gy[ch], gx[ch], gy[ch]);
  }
  return p;
}

void update_in_place(const NcaModel& model, std::span<float> state, bool alive, std::span<const float> perception) {
  const std::size_t c = model.channels, h = model.hidden, pk = model.perception_size();
  if (!alive) return;  // alive-mask: dead cells receive no update
  std::vector<float> hid(h);
  for (std::size_t j = 0; j < h; ++j) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < pk; ++i) acc += perception[i] * model.w1[i * h + j];
    const float z = acc + model.b1[j];
    hid[j] = z > 0.0f ? z : 0.0f;
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    float acc = 0.0f;
    for (std::size_t j = 0; j < h; ++j) acc += hid[j] * model.w2[j * c + ch];
    state[ch] = state[ch] + (acc + model.b2[ch]);
  }
  state[0] = 1.0f;
}

CellState update(const NcaModel& model, const CellState& self, std::span<const float> perception) {
  CellState next = self;
  if (!self.alive) {
    if (!next.channels.empty()) next.channels[0] = 0.0f;
    return next;
  }
  update_in_place(model, next.channels, true, perception);
  return next;
}

std::vector<float> classify(const NcaModel& model, std::span<const float> s) {
  const std::size_t C = model.classes;
  std::vector<float> o(C, 0.0f);
  if (model.head) {
    const auto& hd = *model.head;
    for (std::size_t j = 0; j < C; ++j) {
      float acc = 0.0f;
      for (std::size_t i = 0; i < hd.inputs; ++i) acc += s[i] * hd.weights[i * C + j];
      o[j] = acc;
    }
  } else {
    for (std::size_t j = 0; j < C; ++j) o[j] = s[1 + j];
  }
  return o;
}

std::vector<float> classify(const NcaModel& model, const CellState& state) {
  if (!state.alive) throw DeadCellError("classify called on a dead cell");
  return classify(model, std::span<const float>(state.channels));
}

std::vector<float> softmax(std::span<const float> logits) {
  std::vector<float> out(logits.size());
  if (logits.empty()) return out;
  float m = logits[0];
  for (float v : logits) m = v > m ? v : m;
  float sum = 0.0f;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

std::vector<float> render_glyph(std::span<const float> scores, std::span<const float> glyphs, std::size_t classes) {
  const auto w = softmax(scores);
  std::vector<float> led(vm::kOutputLength, 0.0f);
  for (std::size_t px = 0; px < vm::kOutputLength; ++px) {
    float acc = 0.0f;
    for (std::size_t k = 0; k < classes; ++k) acc += w[k] * glyphs[k * vm::kOutputLength + px];
    led[px] = acc;
  }
  return led;
}

std::size_t argmax(std::span<const float> values) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

}  // namespace ncaswarm::model
