#include "ripo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "ripo/error.hpp"

namespace ripo {
namespace {

constexpr char kMagic[8] = {'R', 'I', 'P', 'O', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error(ErrorKind::kIo, "checkpoint: truncated file");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

Checkpoint make_checkpoint(const RipoModel& model, const AdamState& adam, const std::string& rng_state,
                           std::size_t epoch) {
  Checkpoint c;
  c.config = model.config();
  c.epoch = epoch;
  c.adam = adam;
  c.rng_state = rng_state;
  for (const auto& [name, t] : model.named_parameters()) {
    c.parameters.emplace_back(name, std::vector<double>(t.data().begin(), t.data().end()));
    c.shapes.emplace_back(name, t.shape());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const bool has_moments = c.adam.m.size() == c.parameters.size() && c.adam.v.size() == c.parameters.size();
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  std::size_t offset = 0;
  auto append = [&](const std::string& name, const Shape& shape, const std::vector<double>& values) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
    for (double v : values) put(payload, v);
    offset += values.size();
  };
  for (std::size_t i = 0; i < c.parameters.size(); ++i) {
    append(c.parameters[i].first, c.shapes[i].second, c.parameters[i].second);
  }
  if (has_moments) {
    for (std::size_t i = 0; i < c.parameters.size(); ++i) {
      append("adam.m/" + c.parameters[i].first, c.shapes[i].second, c.adam.m[i]);
      append("adam.v/" + c.parameters[i].first, c.shapes[i].second, c.adam.v[i]);
    }
  }
  const nlohmann::json header = {
      {"config", c.config.to_json()},
      {"epoch", c.epoch},
      {"adam",
       {{"step_count", c.adam.step_count},
        {"lr", c.adam.lr},
        {"beta1", c.adam.beta1},
        {"beta2", c.adam.beta2},
        {"eps", c.adam.eps},
        {"has_moments", has_moments}}},
      {"rng_state", c.rng_state},
      {"tensors", tensors},
  };
  const std::string header_text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;
  out += payload;

  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error(ErrorKind::kIo, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  const std::string in((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::kIo, path.string() + " is not a checkpoint file");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kIo, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = take<std::uint64_t>(in, pos);
  if (pos + header_len > in.size()) throw Error(ErrorKind::kIo, "checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(pos, header_len));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kIo, std::string("checkpoint header: ") + ex.what());
  }
  pos += header_len;
  const std::size_t payload_start = pos;
  const std::size_t payload_doubles = (in.size() - payload_start) / sizeof(double);

  Checkpoint c;
  try {
    c.config = ModelConfig::from_json(header.at("config"));
    c.epoch = header.at("epoch").get<std::size_t>();
    const auto& a = header.at("adam");
    c.adam.step_count = a.at("step_count").get<std::int64_t>();
    c.adam.lr = a.at("lr").get<double>();
    c.adam.beta1 = a.at("beta1").get<double>();
    c.adam.beta2 = a.at("beta2").get<double>();
    c.adam.eps = a.at("eps").get<double>();
    c.rng_state = header.at("rng_state").get<std::string>();

    std::map<std::string, std::vector<double>> moments;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t count = shape_size(shape);
      if (offset + count > payload_doubles) throw Error(ErrorKind::kIo, "checkpoint: tensor '" + name + "' out of range");
      std::vector<double> values(count);
      std::memcpy(values.data(), in.data() + payload_start + offset * sizeof(double), count * sizeof(double));
      if (name.starts_with("adam.")) {
        moments.emplace(name, std::move(values));
      } else {
        c.parameters.emplace_back(name, std::move(values));
        c.shapes.emplace_back(name, shape);
      }
    }
    if (a.at("has_moments").get<bool>()) {
      for (const auto& [name, values] : c.parameters) {
        auto m = moments.find("adam.m/" + name), v = moments.find("adam.v/" + name);
        if (m == moments.end() || v == moments.end()) {
          throw Error(ErrorKind::kIo, "checkpoint: missing optimizer state for '" + name + "'");
        }
        c.adam.m.push_back(m->second);
        c.adam.v.push_back(v->second);
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::kIo, std::string("checkpoint header: ") + ex.what());
  }
  return c;
}

RipoModel restore_model(const Checkpoint& checkpoint) {
  RipoModel model(checkpoint.config);
  model.load_parameters(checkpoint.parameters);
  return model;
}

}  // namespace ripo
