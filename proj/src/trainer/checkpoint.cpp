#include "mlpmatch/trainer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"

namespace mlpmatch::trainer {

namespace {

constexpr char kMagic[8] = {'M', 'L', 'P', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
  std::string name;
  const Tensor<float>* tensor;
};

std::vector<NamedTensor> directory(model::PerturbableSegModel<float>& model,
                                   SgdOptimizer<float>* optimizer) {
  std::vector<NamedTensor> out;
  for (auto& p : model.params()) out.push_back({"param/" + p.name, p.value});
  for (auto& b : model.buffers()) out.push_back({"buffer/" + b.name, b.value});
  if (optimizer) {
    const auto& params = optimizer->params();
    auto& vel = optimizer->velocity();
    for (std::size_t i = 0; i < params.size(); ++i)
      out.push_back({"momentum/" + params[i].name, &vel[i]});
  }
  return out;
}

nlohmann::json meta_to_json(const CheckpointMeta& meta) {
  nlohmann::json j;
  j["iteration"] = meta.iteration;
  j["epoch"] = meta.epoch;
  j["best_miou"] = meta.best_miou;
  j["config"] = meta.config_text;
  j["rng"] = meta.rng;
  return j;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta meta;
  meta.iteration = j.at("iteration").get<int>();
  meta.epoch = j.at("epoch").get<int>();
  meta.best_miou = j.at("best_miou").get<double>();
  meta.config_text = j.at("config").get<std::string>();
  if (j.contains("rng"))
    meta.rng = j.at("rng").get<std::map<std::string, std::string>>();
  return meta;
}

nlohmann::json read_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("checkpoint: '" + path + "' is not a checkpoint file");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kVersion)
    throw DataError("checkpoint: '" + path + "' has unsupported version " + std::to_string(version));
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in) throw DataError("checkpoint: '" + path + "' is truncated");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("checkpoint: '" + path + "' is truncated");
  try {
    return nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: '" + path + "' has a corrupt header: " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::string& path, model::PerturbableSegModel<float>& model,
                     SgdOptimizer<float>* optimizer, const CheckpointMeta& meta) {
  const auto dir = directory(model, optimizer);

  nlohmann::json j = meta_to_json(meta);
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& nt : dir) {
    nlohmann::json t;
    t["name"] = nt.name;
    t["shape"] = nt.tensor->shape();
    t["offset"] = offset;
    offset += static_cast<std::uint64_t>(nt.tensor->size()) * sizeof(float);
    tensors.push_back(t);
  }
  j["tensors"] = tensors;
  const std::string header = j.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot write '" + path + "'");
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  const std::uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& nt : dir)
    out.write(reinterpret_cast<const char*>(nt.tensor->data()),
              static_cast<std::streamsize>(nt.tensor->size() * sizeof(float)));
  if (!out) throw DataError("checkpoint: write to '" + path + "' failed");
}

CheckpointMeta load_checkpoint(const std::string& path, model::PerturbableSegModel<float>& model,
                               SgdOptimizer<float>* optimizer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  const nlohmann::json j = read_header(in, path);
  const CheckpointMeta meta = meta_from_json(j);

  std::map<std::string, std::pair<std::vector<int>, std::uint64_t>> file_tensors;
  for (const auto& t : j.at("tensors"))
    file_tensors[t.at("name").get<std::string>()] = {t.at("shape").get<std::vector<int>>(),
                                                     t.at("offset").get<std::uint64_t>()};

  const std::streampos payload_start = in.tellg();
  auto read_into = [&](const std::string& name, Tensor<float>* dst) {
    const auto it = file_tensors.find(name);
    if (it == file_tensors.end())
      throw DataError("checkpoint: '" + path + "' is missing tensor '" + name + "'");
    if (it->second.first != dst->shape())
      throw DataError("checkpoint: tensor '" + name + "' in '" + path +
                      "' does not match the model's shape");
    in.seekg(payload_start + static_cast<std::streamoff>(it->second.second));
    in.read(reinterpret_cast<char*>(dst->data()),
            static_cast<std::streamsize>(dst->size() * sizeof(float)));
    if (!in) throw DataError("checkpoint: '" + path + "' is truncated at tensor '" + name + "'");
  };

  for (auto& p : model.params()) read_into("param/" + p.name, p.value);
  for (auto& b : model.buffers()) read_into("buffer/" + b.name, b.value);
  if (optimizer) {
    const auto& params = optimizer->params();
    auto& vel = optimizer->velocity();
    for (std::size_t i = 0; i < params.size(); ++i)
      read_into("momentum/" + params[i].name, &vel[i]);
  }
  return meta;
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  return meta_from_json(read_header(in, path));
}

}  // namespace mlpmatch::trainer
