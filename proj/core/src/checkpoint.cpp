#include "lrsflow/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "lrsflow/errors.hpp"

namespace lrsflow::ck {

namespace {

void write_doubles_le(std::ostream& out, std::span<const double> xs) {
  for (const double x : xs) {
    std::uint64_t u;
    std::memcpy(&u, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (u >> (8 * i)) & 0xFF;
    out.write(reinterpret_cast<const char*>(b), 8);
  }
}

void read_doubles_le(std::istream& in, std::span<double> xs, const std::string& path) {
  for (double& x : xs) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) throw CheckpointError("truncated payload in " + path);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= std::uint64_t(b[i]) << (8 * i);
    std::memcpy(&x, &u, 8);
  }
}

nlohmann::json stats_to_json(const data::Standardization& s) {
  return nlohmann::json{{"mean", s.mean},
                        {"stddev", s.stddev},
                        {"kept_columns", s.kept_columns},
                        {"source_columns", s.source_columns}};
}

data::Standardization stats_from_json(const nlohmann::json& j) {
  data::Standardization s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("stddev").get<std::vector<double>>();
  s.kept_columns = j.at("kept_columns").get<std::vector<int>>();
  s.source_columns = j.at("source_columns").get<int>();
  return s;
}

}  // namespace

void save(const std::string& path, const Checkpoint& ck) {
  std::vector<double> payload;
  nlohmann::json params_meta = nlohmann::json::array();
  for (const auto& [name, t] : ck.params) {
    params_meta.push_back({{"name", name},
                           {"shape", t.shape()},
                           {"offset", payload.size()},
                           {"count", t.size()}});
    payload.insert(payload.end(), t.data(), t.data() + t.size());
  }

  nlohmann::json opt = nullptr;
  if (ck.has_optimizer) {
    const std::size_t m_off = payload.size();
    for (const auto& t : ck.optimizer.m) {
      payload.insert(payload.end(), t.data(), t.data() + t.size());
    }
    const std::size_t v_off = payload.size();
    for (const auto& t : ck.optimizer.v) {
      payload.insert(payload.end(), t.data(), t.data() + t.size());
    }
    opt = nlohmann::json{{"step", ck.optimizer.step},
                         {"beta1", ck.optimizer.beta1},
                         {"beta2", ck.optimizer.beta2},
                         {"eps", ck.optimizer.eps},
                         {"m_offset", m_off},
                         {"v_offset", v_off}};
  }

  nlohmann::json header{
      {"format_version", kFormatVersion},
      {"config", train::config_to_json(ck.config)},
      {"topology", ck.topology},
      {"params", params_meta},
      {"optimizer", opt},
      {"rng", {{"seed", ck.rng_seed}, {"counter", ck.rng_counter}}},
      {"best_val_nll", std::isfinite(ck.best_val_nll)
                           ? nlohmann::json(ck.best_val_nll)
                           : nlohmann::json(nullptr)},
      {"payload_doubles", payload.size()},
      {"standardization",
       ck.input_stats ? stats_to_json(*ck.input_stats) : nlohmann::json(nullptr)},
  };

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out << header.dump() << '\n';
  write_doubles_le(out, payload);
  if (!out) throw CheckpointError("write failed: " + path);
}

Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("empty checkpoint: " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("unparseable checkpoint header in " + path + ": " + e.what());
  }

  try {
    const int version = header.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                            " in " + path + " (expected " +
                            std::to_string(kFormatVersion) + ")");
    }

    Checkpoint ck;
    ck.config = train::config_from_json(header.at("config"));
    ck.topology = header.at("topology");

    const auto n_payload = header.at("payload_doubles").get<std::size_t>();
    std::vector<double> payload(n_payload);
    read_doubles_le(in, payload, path);

    auto slice = [&](std::size_t off, std::size_t count) {
      if (off + count > payload.size()) {
        throw CheckpointError("tensor range exceeds payload in " + path);
      }
      return std::vector<double>(payload.begin() + std::ptrdiff_t(off),
                                 payload.begin() + std::ptrdiff_t(off + count));
    };

    for (const auto& meta : header.at("params")) {
      const auto name = meta.at("name").get<std::string>();
      const auto shape = meta.at("shape").get<std::vector<std::int64_t>>();
      const auto off = meta.at("offset").get<std::size_t>();
      const auto count = meta.at("count").get<std::size_t>();
      if (std::int64_t(count) != shape_size(shape)) {
        throw CheckpointError("tensor '" + name + "' count does not match shape in " + path);
      }
      ck.params.emplace_back(name, Tensor(shape, slice(off, count)));
    }

    if (!header.at("optimizer").is_null()) {
      const auto& opt = header.at("optimizer");
      ck.has_optimizer = true;
      ck.optimizer.step = opt.at("step").get<long>();
      ck.optimizer.beta1 = opt.at("beta1").get<double>();
      ck.optimizer.beta2 = opt.at("beta2").get<double>();
      ck.optimizer.eps = opt.at("eps").get<double>();
      std::size_t off = opt.at("m_offset").get<std::size_t>();
      for (const auto& [name, t] : ck.params) {
        ck.optimizer.m.emplace_back(t.shape(), slice(off, std::size_t(t.size())));
        off += std::size_t(t.size());
      }
      off = opt.at("v_offset").get<std::size_t>();
      for (const auto& [name, t] : ck.params) {
        ck.optimizer.v.emplace_back(t.shape(), slice(off, std::size_t(t.size())));
        off += std::size_t(t.size());
      }
    }

    ck.rng_seed = header.at("rng").at("seed").get<std::uint64_t>();
    ck.rng_counter = header.at("rng").at("counter").get<std::uint64_t>();
    ck.best_val_nll = header.at("best_val_nll").is_null()
                          ? std::numeric_limits<double>::quiet_NaN()
                          : header.at("best_val_nll").get<double>();
    if (!header.at("standardization").is_null()) {
      ck.input_stats = stats_from_json(header.at("standardization"));
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint header in " + path + ": " + e.what());
  }
}

flow::FlowModel restore_model(const Checkpoint& ck) {
  flow::FlowModel model = flow::FlowModel::from_topology(ck.topology);
  auto& store = model.params();
  if (ck.params.size() != store.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ck.params.size()) +
                          " parameters, model expects " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    bool found = false;
    for (const auto& [name, t] : ck.params) {
      if (name == store.name(i)) {
        if (!t.same_shape(store.value(i))) {
          throw CheckpointError("parameter '" + name + "' has shape " + t.shape_str() +
                                ", model expects " + store.value(i).shape_str());
        }
        store.value(i) = t;
        found = true;
        break;
      }
    }
    if (!found) throw CheckpointError("checkpoint missing parameter '" + store.name(i) + "'");
  }
  return model;
}

Checkpoint snapshot(const flow::FlowModel& model, const train::TrainConfig& cfg,
                    double best_val_nll,
                    const std::optional<data::Standardization>& stats) {
  Checkpoint ck;
  ck.config = cfg;
  ck.topology = model.topology();
  const auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    ck.params.emplace_back(store.name(i), store.value(i));
  }
  ck.rng_seed = cfg.seed;
  ck.best_val_nll = best_val_nll;
  ck.input_stats = stats;
  return ck;
}

}  // namespace lrsflow::ck
