// Regenerates data/fixtures. The files are committed; run this only when the
// binary format changes on purpose.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "ncaswarm/model/compiler.hpp"
#include "ncaswarm/model/firefly.hpp"
#include "ncaswarm/rng.hpp"
#include "ncaswarm/vm/program.hpp"

using namespace ncaswarm;
namespace fs = std::filesystem;

namespace {

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

model::NcaModel small_model() {
  CounterRng rng(2024);
  auto m = model::NcaModel::zeros(6, 12, model::KernelSet::classification(), 3, 4);
  for (auto* v : {&m.w1, &m.b1, &m.w2, &m.b2, &m.head->weights})
    for (auto& x : *v) x = rng.normal() * 0.2f;
  for (auto& g : m.glyphs) g = rng.uniform();
  return m;
}

// Two writable tensors besides the mandatory pair, one constant.
vm::Program skeleton() {
  vm::Program p;
  p.header.state_size = 2;
  p.tensors.push_back({0, vm::TensorKind::Writable, 10, {}, 0});
  p.tensors.push_back({1, vm::TensorKind::ReadOnly, 2, {0.5f, -1.0f}, 0});
  p.tensors.push_back({2, vm::TensorKind::Writable, 2, {}, 10});
  p.tensors.push_back({255, vm::TensorKind::Writable, 75, {}, 12});
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path dir = argc > 1 ? argv[1] : "data/fixtures";
  fs::create_directories(dir);
  nlohmann::json manifest = {{"golden", nlohmann::json::array()}, {"malformed", nlohmann::json::object()}};

  auto golden = [&](const std::string& name, const vm::Program& p) {
    vm::validate(p);
    write_bytes(dir / name, vm::save_program(p));
    manifest["golden"].push_back(name);
  };
  golden("firefly.ncap", model::compile_firefly({}));
  golden("small_model.ncap", model::compile(small_model()));
  auto arith = skeleton();
  arith.header.pre_delay_ms = 5;
  arith.operations = {vm::ops::add(0, 1, 2, 2), vm::ops::relu(2, 0, 2), vm::ops::step(2, 2, 2, 0.25f), vm::ops::fill(255, 75, 0.125f)};
  golden("arith.ncap", arith);

  auto bad = [&](const std::string& name, const std::vector<std::uint8_t>& bytes, const std::string& code) {
    write_bytes(dir / name, bytes);
    manifest["malformed"][name] = code;
  };
  auto magic = vm::save_program(arith);
  magic[3] = 'X';
  bad("bad_magic.ncap", magic, "BadMagic");

  auto reserved = arith;
  reserved.operations = {vm::ops::nop()};
  reserved.operations[0].opcode = static_cast<vm::Opcode>(0x09);
  bad("reserved_opcode_09.ncap", vm::save_program(reserved), "UnknownOpcode");

  auto dangling = arith;
  dangling.operations = {vm::ops::add(0, 7, 2, 2)};
  bad("dangling_tensor.ncap", vm::save_program(dangling), "DanglingTensorId");

  auto ro_write = arith;
  ro_write.operations = {vm::ops::relu(0, 1, 2)};
  bad("read_only_write.ncap", vm::save_program(ro_write), "WriteToReadOnly");

  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  std::cout << "wrote fixtures to " << dir.string() << "\n";
}
