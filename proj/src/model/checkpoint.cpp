#include "ncaswarm/model/checkpoint.hpp"

#include <fstream>

namespace ncaswarm::model {

using nlohmann::json;

json to_json(const NcaModel& m) {
  json doc;
  doc["c"] = m.channels;
  doc["h"] = m.hidden;
  json kernels = json::array();
  for (auto k : m.kernels.kernels()) kernels.push_back(to_string(k));
  doc["kernels"] = kernels;
  doc["W1"] = m.w1;
  doc["B1"] = m.b1;
  doc["W2"] = m.w2;
  doc["B2"] = m.b2;
  doc["classes"] = m.classes;
  if (m.head) doc["head"] = {{"R", m.head->inputs}, {"C", m.head->classes}, {"W_C", m.head->weights}};
  doc["glyphs"] = m.glyphs;
  return doc;
}

NcaModel model_from_json(const json& doc) {
  try {
    NcaModel m;
    m.channels = doc.at("c").get<std::size_t>();
    m.hidden = doc.at("h").get<std::size_t>();
    std::vector<Kernel> kernels;
    for (const auto& k : doc.at("kernels")) kernels.push_back(kernel_from_string(k.get<std::string>()));
    m.kernels = KernelSet(std::move(kernels));
    m.w1 = doc.at("W1").get<std::vector<float>>();
    m.b1 = doc.at("B1").get<std::vector<float>>();
    m.w2 = doc.at("W2").get<std::vector<float>>();
    m.b2 = doc.at("B2").get<std::vector<float>>();
    m.glyphs = doc.at("glyphs").get<std::vector<float>>();
    if (doc.contains("head") && !doc["head"].is_null()) {
      const auto& h = doc["head"];
      m.head = ClassificationHead{h.at("R").get<std::size_t>(), h.at("C").get<std::size_t>(),
                                  h.at("W_C").get<std::vector<float>>()};
    }
    m.classes = doc.contains("classes") ? doc["classes"].get<std::size_t>()
                                        : (m.head ? m.head->classes : m.glyphs.size() / 75);
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ModelError(std::string("malformed model checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const NcaModel& model) {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot write checkpoint " + path);
  out << to_json(model).dump() << '\n';
}

NcaModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open checkpoint " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ModelError("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace ncaswarm::model
