#pragma once

#include "ncaswarm/rng.hpp"
#include "ncaswarm/vm/program.hpp"

namespace ncaswarm::model {

// Pulse-coupled oscillator. The phase advances by `rate` each cycle; a flash
// seen on any neighbor advances it further by `coupling * phase` plus a small
// uniform jitter in [0, noise_max). Reaching `threshold` fires and resets.
struct FireflyParams {
  float rate = 0.01f;
  float coupling = 0.1f;
  float noise_max = 0.005f;
  float threshold = 1.0f;
};

struct FireflyResult {
  float phase = 0.0f;
  bool flash = false;
};

// One cell update. Always consumes exactly one draw from `rng` so the stream
// stays aligned with the compiled program's FILL_RAND.
FireflyResult firefly_step(float phase, bool flash_detected, const FireflyParams& params, CounterRng& rng);

// State layout of the firefly program: [alive, phase, flash].
inline constexpr std::size_t kFireflyChannels = 3;
inline constexpr std::size_t kFireflyPhase = 1;
inline constexpr std::size_t kFireflyFlash = 2;

// Program built from the Von Neumann kernel, STEP and FILL_RAND. LEDs show
// the phase as white brightness, flashes in red.
vm::Program compile_firefly(const FireflyParams& params);

}  // namespace ncaswarm::model
