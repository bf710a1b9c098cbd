#include "sslface/pixelhop.hpp"

#include <algorithm>
#include <numeric>

#include "sslface/error.hpp"
#include "sslface/parallel.hpp"
#include "sslface/random.hpp"

namespace sslface {
namespace {

using Sink = std::function<void(const Eigen::MatrixXd&)>;

struct UnitFit {
  HopBank bank;
  std::vector<HopNode> nodes;  // every spectrum component, in component order
  // Pooled outputs of intermediate nodes: [intermediate rank][image].
  std::vector<std::vector<ChannelMap>> forwarded;
};

std::uint64_t path_key(const std::vector<int>& path) {
  std::uint64_t h = 0x5341414255ULL;
  for (int c : path) h = mix64(h ^ static_cast<std::uint64_t>(c + 1));
  return h;
}

Eigen::MatrixXd subsample_rows(const Eigen::MatrixXd& rows, double rate, std::uint64_t key) {
  if (rate >= 1.0) return rows;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const double u = static_cast<double>(mix64(key ^ mix64(static_cast<std::uint64_t>(r))) >> 11) * 0x1.0p-53;
    if (u < rate) keep.push_back(r);
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(keep.size()), rows.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows.row(keep[i]);
  return out;
}

ChannelMap column_as_map(const Eigen::MatrixXd& responses, int column, int side) {
  return Eigen::Map<const ChannelMap>(responses.col(column).data(), side, side);
}

// Fits one Saab unit on inputs[i] (one per training image) and produces the
// pooled responses of its intermediate nodes.
template <typename Input>
UnitFit fit_unit(const std::vector<Input>& inputs, const PixelHopConfig& cfg, int level, int parent_node,
                 const std::vector<int>& parent_path, double parent_e_norm) {
  const std::uint64_t unit_key = mix64(cfg.seed ^ path_key(parent_path) ^ static_cast<std::uint64_t>(level));
  const PatchSource source = [&](const Sink& sink) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const PatchSet ps = extract_patches(inputs[i], cfg.window, cfg.stride);
      if (cfg.patch_subsample >= 1.0) {
        sink(ps.data);
      } else {
        sink(subsample_rows(ps.data, cfg.patch_subsample, mix64(unit_key ^ static_cast<std::uint64_t>(i))));
      }
    }
  };
  const int patch_dim = extract_patches(inputs.front(), cfg.window, cfg.stride).patch_dim;
  const SaabSpectrum spectrum = fit_spectrum(patch_dim, source);
  const double total = spectrum.total_energy();

  UnitFit unit;
  std::vector<int> kept;
  for (int c = 0; c < patch_dim; ++c) {
    HopNode node;
    node.path = parent_path;
    node.path.push_back(c);
    node.level = level;
    node.parent = parent_node;
    node.e_init = total > 0.0 ? spectrum.energies[c] / total : 0.0;
    node.e_norm = parent_e_norm * node.e_init;
    if (c > spectrum.rank || node.e_norm < cfg.e_cutoff) {
      node.status = NodeStatus::kDiscarded;
    } else {
      node.status = (level < kHopLevels && node.e_norm >= cfg.e_forward) ? NodeStatus::kIntermediate : NodeStatus::kLeaf;
      node.column = static_cast<int>(kept.size());
      kept.push_back(c);
    }
    unit.nodes.push_back(std::move(node));
  }
  unit.bank.level = level;
  unit.bank.parent_node = parent_node;
  unit.bank.bank = build_bank(spectrum, kept, source);

  std::vector<int> forward_columns;
  for (const auto& n : unit.nodes) {
    if (n.status == NodeStatus::kIntermediate) forward_columns.push_back(n.column);
  }
  if (!forward_columns.empty()) {
    unit.forwarded.assign(forward_columns.size(), std::vector<ChannelMap>(inputs.size()));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const PatchSet ps = extract_patches(inputs[i], cfg.window, cfg.stride);
      const Eigen::MatrixXd responses = apply_saab(unit.bank.bank, ps, true);
      for (std::size_t f = 0; f < forward_columns.size(); ++f) {
        unit.forwarded[f][i] = max_pool_2x2(column_as_map(responses, forward_columns[f], ps.grid_rows));
      }
    }
  }
  return unit;
}

// Appends a fitted unit to the model; returns the node indices of its
// intermediate nodes in order.
std::vector<int> append_unit(PixelHopModel& model, UnitFit&& unit) {
  const int bank_index = static_cast<int>(model.banks.size());
  if (unit.bank.parent_node >= 0) model.nodes[unit.bank.parent_node].child_bank = bank_index;
  model.banks.push_back(std::move(unit.bank));
  std::vector<int> intermediate;
  for (auto& n : unit.nodes) {
    n.bank = bank_index;
    if (n.status == NodeStatus::kIntermediate) intermediate.push_back(static_cast<int>(model.nodes.size()));
    model.nodes.push_back(std::move(n));
  }
  return intermediate;
}

void check_level(const PixelHopModel& model, int level) {
  if (model.level_counts[level - 1] == 0) {
    throw NumericError("fit_pixelhop: no usable channels at level " + std::to_string(level) +
                       " (every node discarded; lower the energy cutoff)");
  }
}

}  // namespace

const char* to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::kIntermediate:
      return "intermediate";
    case NodeStatus::kLeaf:
      return "leaf";
    case NodeStatus::kDiscarded:
      return "discarded";
  }
  return "?";
}

std::string HopNode::id() const {
  std::string s = std::to_string(level);
  for (int c : path) s += "." + std::to_string(c);
  return s;
}

void PixelHopConfig::validate() const {
  if (window < 1 || stride < 1) throw InvalidInput("pixelhop: window and stride must be >= 1");
  if (pool != 2) throw InvalidInput("pixelhop: only 2x2 max-pooling is supported");
  if (input_channels != 1 && input_channels != 2) throw InvalidInput("pixelhop: input must have 1 or 2 channels");
  if (!(e_cutoff >= 0.0 && e_cutoff <= e_forward && e_forward <= 1.0)) {
    throw InvalidInput("pixelhop: need 0 <= E_C <= E_F <= 1 (got E_C=" + std::to_string(e_cutoff) +
                       ", E_F=" + std::to_string(e_forward) + ")");
  }
  if (!(patch_subsample > 0.0 && patch_subsample <= 1.0)) throw InvalidInput("pixelhop: patch_subsample must be in (0, 1]");
  int side = input_size;
  for (int level = 1; level <= kHopLevels; ++level) {
    if (side < window) throw InvalidInput("pixelhop: input too small for " + std::to_string(kHopLevels) + " levels");
    side = (side - window) / stride + 1;
    if (level < kHopLevels) side /= pool;
  }
  if (side != 1) throw InvalidInput("pixelhop: geometry must end in a 1x1 grid at the last level");
}

std::array<int, kHopLevels> PixelHopConfig::grid_sizes() const {
  std::array<int, kHopLevels> out{};
  int side = input_size;
  for (int level = 0; level < kHopLevels; ++level) {
    out[level] = (side - window) / stride + 1;
    side = out[level] / pool;
  }
  return out;
}

std::vector<int> PixelHopModel::emitted(int level) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].level == level && nodes[i].status != NodeStatus::kDiscarded) out.push_back(static_cast<int>(i));
  }
  return out;
}

PixelHopModel fit_pixelhop(const std::vector<ImageTensor>& images, const PixelHopConfig& config) {
  config.validate();
  if (images.size() < 2) throw InvalidInput("fit_pixelhop: need at least 2 training images");
  for (const auto& img : images) {
    if (img.height != config.input_size || img.width != config.input_size || img.channels != config.input_channels) {
      throw InvalidInput("fit_pixelhop: training images must be " + std::to_string(config.input_size) + "x" +
                         std::to_string(config.input_size) + "x" + std::to_string(config.input_channels));
    }
  }

  PixelHopModel model;
  model.config = config;

  // Level 1: one unit over all input channels jointly.
  UnitFit root = fit_unit(images, config, 1, -1, {}, 1.0);
  auto forwarded = std::move(root.forwarded);
  std::vector<int> parents = append_unit(model, std::move(root));
  model.level_counts[0] = static_cast<int>(model.emitted(1).size());
  check_level(model, 1);

  for (int level = 2; level <= kHopLevels; ++level) {
    if (parents.empty()) check_level(model, level);
    std::vector<UnitFit> units(parents.size());
    parallel_for(parents.size(), config.threads, [&](std::size_t p) {
      const HopNode& parent = model.nodes[parents[p]];
      units[p] = fit_unit(forwarded[p], config, level, parents[p], parent.path, parent.e_norm);
      std::vector<ChannelMap>().swap(forwarded[p]);
    });
    std::vector<std::vector<ChannelMap>> next_forwarded;
    std::vector<int> next_parents;
    for (auto& unit : units) {
      for (auto& f : unit.forwarded) next_forwarded.push_back(std::move(f));
      const auto ids = append_unit(model, std::move(unit));
      next_parents.insert(next_parents.end(), ids.begin(), ids.end());
    }
    forwarded = std::move(next_forwarded);
    parents = std::move(next_parents);
    model.level_counts[level - 1] = static_cast<int>(model.emitted(level).size());
    check_level(model, level);
  }
  return model;
}

HopOutputs apply_pixelhop(const PixelHopModel& model, const ImageTensor& image) {
  const auto& cfg = model.config;
  if (image.height != cfg.input_size || image.width != cfg.input_size || image.channels != cfg.input_channels) {
    throw InvalidInput("apply_pixelhop: image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                       "x" + std::to_string(image.channels) + ", model expects " + std::to_string(cfg.input_size) +
                       "x" + std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_channels));
  }
  if (model.banks.empty()) throw InvalidInput("apply_pixelhop: empty model");

  std::vector<std::vector<int>> members(model.banks.size());
  for (std::size_t i = 0; i < model.nodes.size(); ++i) {
    const auto& n = model.nodes[i];
    if (n.status != NodeStatus::kDiscarded) members[n.bank].push_back(static_cast<int>(i));
  }

  HopOutputs out;
  out.level1.reserve(model.level_counts[0]);
  out.level2.reserve(model.level_counts[1]);
  out.level3.reserve(model.level_counts[2]);

  // Depth-first over banks; within each level, emission follows node order.
  auto run = [&](auto&& self, int bank_index, const PatchSet& patches) -> void {
    const HopBank& hb = model.banks[bank_index];
    const Eigen::MatrixXd responses = apply_saab(hb.bank, patches, true);
    for (int node_index : members[bank_index]) {
      const HopNode& node = model.nodes[node_index];
      if (hb.level == kHopLevels) {
        out.level3.push_back(responses(0, node.column));
        continue;
      }
      ChannelMap map = column_as_map(responses, node.column, patches.grid_rows);
      if (node.status == NodeStatus::kIntermediate && node.child_bank >= 0) {
        const ChannelMap pooled = max_pool_2x2(map);
        (hb.level == 1 ? out.level1 : out.level2).push_back(std::move(map));
        self(self, node.child_bank, extract_patches(pooled, cfg.window, cfg.stride));
      } else {
        (hb.level == 1 ? out.level1 : out.level2).push_back(std::move(map));
      }
    }
  };

  // Depth-first emission interleaves levels but keeps each level's order.
  run(run, 0, extract_patches(image, cfg.window, cfg.stride));
  return out;
}

HopParameterCounts count_parameters(const PixelHopModel& model, ParamAccounting accounting) {
  HopParameterCounts counts;
  const long area = static_cast<long>(model.config.window) * model.config.window;
  for (const auto& hb : model.banks) {
    const auto& bank = hb.bank;
    if (hb.level == 1) {
      const long dim = accounting == ParamAccounting::kTable4 ? area : bank.patch_dim;
      counts.levels[0] += dim * bank.n_kept() + 1;
    } else {
      const bool has_dc = std::find(bank.components.begin(), bank.components.end(), 0) != bank.components.end();
      counts.levels[hb.level - 1] += static_cast<long>(bank.patch_dim) * (bank.n_kept() - (has_dc ? 1 : 0)) + 1;
    }
  }
  return counts;
}

HopParameterCounts count_parameters(std::array<int, kHopLevels> k, int first_unit_patch_dim, int window_area,
                                    ParamAccounting accounting) {
  HopParameterCounts counts;
  const long first_dim = accounting == ParamAccounting::kTable4 ? window_area : first_unit_patch_dim;
  counts.levels[0] = first_dim * k[0] + 1;
  for (int l = 1; l < kHopLevels; ++l) {
    counts.levels[l] = static_cast<long>(window_area) * (k[l] - k[l - 1]) + k[l - 1];
  }
  return counts;
}

nlohmann::json pixelhop_to_container(const PixelHopModel& model, ContainerWriter& writer) {
  const auto& c = model.config;
  nlohmann::json j;
  j["config"] = {{"window", c.window},
                 {"stride", c.stride},
                 {"pool", c.pool},
                 {"input_size", c.input_size},
                 {"input_channels", c.input_channels},
                 {"e_cutoff", c.e_cutoff},
                 {"e_forward", c.e_forward},
                 {"patch_subsample", c.patch_subsample},
                 {"seed", c.seed}};
  j["level_counts"] = model.level_counts;
  j["banks"] = nlohmann::json::array();
  for (const auto& hb : model.banks) {
    const auto& b = hb.bank;
    j["banks"].push_back({{"level", hb.level},
                          {"parent_node", hb.parent_node},
                          {"patch_dim", b.patch_dim},
                          {"components", b.components},
                          {"kernels", writer.add_array({b.kernels.data(), static_cast<std::size_t>(b.kernels.size())})},
                          {"eigenvalues", writer.add_array(b.eigenvalues)},
                          {"dc_energy_raw", writer.add_value(b.dc_energy_raw)},
                          {"bias", writer.add_value(b.bias)}});
  }
  nlohmann::json nodes = {{"id", nlohmann::json::array()},
                          {"level", nlohmann::json::array()},
                          {"parent", nlohmann::json::array()},
                          {"bank", nlohmann::json::array()},
                          {"column", nlohmann::json::array()},
                          {"child_bank", nlohmann::json::array()},
                          {"status", nlohmann::json::array()}};
  std::vector<double> e_init, e_norm;
  for (const auto& n : model.nodes) {
    nodes["id"].push_back(n.id());
    nodes["level"].push_back(n.level);
    nodes["parent"].push_back(n.parent);
    nodes["bank"].push_back(n.bank);
    nodes["column"].push_back(n.column);
    nodes["child_bank"].push_back(n.child_bank);
    nodes["status"].push_back(to_string(n.status));
    e_init.push_back(n.e_init);
    e_norm.push_back(n.e_norm);
  }
  nodes["e_init"] = writer.add_array(e_init);
  nodes["e_norm"] = writer.add_array(e_norm);
  j["nodes"] = std::move(nodes);
  return j;
}

PixelHopModel pixelhop_from_container(const nlohmann::json& j, const ContainerReader& reader) {
  auto fail = [](const std::string& what) { return LoadError(LoadError::Reason::kFormat, "pixelhop section: " + what); };
  try {
    PixelHopModel model;
    const auto& c = j.at("config");
    auto& cfg = model.config;
    cfg.window = c.at("window");
    cfg.stride = c.at("stride");
    cfg.pool = c.at("pool");
    cfg.input_size = c.at("input_size");
    cfg.input_channels = c.at("input_channels");
    cfg.e_cutoff = c.at("e_cutoff");
    cfg.e_forward = c.at("e_forward");
    cfg.patch_subsample = c.at("patch_subsample");
    cfg.seed = c.at("seed");
    model.level_counts = j.at("level_counts").get<std::array<int, kHopLevels>>();

    for (const auto& b : j.at("banks")) {
      HopBank hb;
      hb.level = b.at("level");
      hb.parent_node = b.at("parent_node");
      hb.bank.patch_dim = b.at("patch_dim");
      hb.bank.components = b.at("components").get<std::vector<int>>();
      const auto kernels = reader.array(b.at("kernels"));
      const auto cols = static_cast<Eigen::Index>(hb.bank.components.size());
      if (kernels.size() != static_cast<std::size_t>(hb.bank.patch_dim) * hb.bank.components.size()) {
        throw fail("kernel array size mismatch");
      }
      hb.bank.kernels = Eigen::Map<const Eigen::MatrixXd>(kernels.data(), hb.bank.patch_dim, cols);
      hb.bank.eigenvalues = reader.array(b.at("eigenvalues"));
      hb.bank.dc_energy_raw = reader.value(b.at("dc_energy_raw"));
      hb.bank.bias = reader.value(b.at("bias"));
      model.banks.push_back(std::move(hb));
    }

    const auto& n = j.at("nodes");
    const auto ids = n.at("id").get<std::vector<std::string>>();
    const auto e_init = reader.array(n.at("e_init"));
    const auto e_norm = reader.array(n.at("e_norm"));
    if (e_init.size() != ids.size() || e_norm.size() != ids.size()) throw fail("node energy size mismatch");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      HopNode node;
      node.level = n.at("level").at(i);
      node.parent = n.at("parent").at(i);
      node.bank = n.at("bank").at(i);
      node.column = n.at("column").at(i);
      node.child_bank = n.at("child_bank").at(i);
      const std::string status = n.at("status").at(i);
      if (status == "intermediate") {
        node.status = NodeStatus::kIntermediate;
      } else if (status == "leaf") {
        node.status = NodeStatus::kLeaf;
      } else if (status == "discarded") {
        node.status = NodeStatus::kDiscarded;
      } else {
        throw fail("unknown node status " + status);
      }
      std::size_t pos = ids[i].find('.');
      while (pos != std::string::npos) {
        const std::size_t next = ids[i].find('.', pos + 1);
        node.path.push_back(std::stoi(ids[i].substr(pos + 1, next - pos - 1)));
        pos = next;
      }
      node.e_init = e_init[i];
      node.e_norm = e_norm[i];
      if (node.bank < 0 || node.bank >= static_cast<int>(model.banks.size())) throw fail("node bank out of range");
      if (node.column >= model.banks[node.bank].bank.n_kept()) throw fail("node column out of range");
      model.nodes.push_back(std::move(node));
    }
    model.config.validate();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  } catch (const std::invalid_argument&) {
    throw fail("malformed node id");
  }
}

void save_model(const PixelHopModel& model, const std::filesystem::path& path) {
  ContainerWriter writer;
  nlohmann::json header;
  header["kind"] = "pixelhop";
  header["pixelhop"] = pixelhop_to_container(model, writer);
  writer.write(path, header);
}

PixelHopModel load_model(const std::filesystem::path& path) {
  const auto reader = ContainerReader::read(path);
  const auto& h = reader.header();
  if (!h.contains("kind") || h["kind"] != "pixelhop") {
    throw LoadError(LoadError::Reason::kFormat, path.string() + " does not hold a standalone transform model");
  }
  return pixelhop_from_container(h.at("pixelhop"), reader);
}

}  // namespace sslface
