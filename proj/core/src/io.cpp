#include "ckgan/io.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ckgan {

using nlohmann::json;

namespace {

const char* kKnownKeys[] = {
    "dataset",        "architecture",  "loss",           "kernel",
    "gaussian_sigma", "laplacian_sigma", "exponential_sigma", "matern_alpha",
    "matern_length",  "rbf_sigmas",    "lambda",         "learning_rate",
    "n_discriminator", "batch_size",   "full_batch",     "iterations",
    "gp_target",      "eval_every",    "seed",           "train_size",
    "eval_samples",   "mmd_unbiased",  "checkpoint_every", "out_dir",
};

bool known_key(const std::string& k) {
  for (const char* s : kKnownKeys)
    if (k == s) return true;
  return false;
}

struct KernelParams {
  double gaussian_sigma = 10.0;
  double laplacian_sigma = 100.0;
  double exponential_sigma = 10.0;
  double matern_alpha = 1.0;
  double matern_length = 10.0;
  std::vector<double> rbf_sigmas = {1, 2, 4, 8, 16};
};

KernelKind make_kind(KernelFamily f, const KernelParams& p) {
  switch (f) {
    case KernelFamily::Gaussian: return KernelKind::gaussian(p.gaussian_sigma);
    case KernelFamily::Laplacian: return KernelKind::laplacian(p.laplacian_sigma);
    case KernelFamily::RBFMixture: return KernelKind::rbf_mixture(p.rbf_sigmas);
    case KernelFamily::Exponential: return KernelKind::exponential(p.exponential_sigma);
    case KernelFamily::Matern32: return KernelKind::matern32(p.matern_alpha, p.matern_length);
    case KernelFamily::Matern52: return KernelKind::matern52(p.matern_alpha, p.matern_length);
  }
  throw ConfigError("bad kernel family");
}

KernelSetting make_kernel_setting(const std::string& name, const KernelParams& p) {
  KernelSetting ks;
  auto mix_with = [&](SelectionMode mode) {
    ks.use_mix = true;
    ks.mix.mode = mode;
    ks.mix.components = {make_kind(KernelFamily::Gaussian, p),
                         make_kind(KernelFamily::Laplacian, p),
                         make_kind(KernelFamily::RBFMixture, p),
                         make_kind(KernelFamily::Exponential, p),
                         make_kind(KernelFamily::Matern32, p),
                         make_kind(KernelFamily::Matern52, p)};
  };
  if (name == "gaussian") ks.single = make_kind(KernelFamily::Gaussian, p);
  else if (name == "laplacian") ks.single = make_kind(KernelFamily::Laplacian, p);
  else if (name == "rbf_mixture") ks.single = make_kind(KernelFamily::RBFMixture, p);
  else if (name == "exponential") ks.single = make_kind(KernelFamily::Exponential, p);
  else if (name == "matern32") ks.single = make_kind(KernelFamily::Matern32, p);
  else if (name == "matern52") ks.single = make_kind(KernelFamily::Matern52, p);
  else if (name == "soft") mix_with(SelectionMode::Soft);
  else if (name == "direct_linear") mix_with(SelectionMode::DirectLinear);
  else if (name == "one_hot") mix_with(SelectionMode::OneHot);
  else
    throw ConfigError("unknown kernel '" + name +
                      "' (expected gaussian, laplacian, rbf_mixture, exponential, matern32, "
                      "matern52, soft, direct_linear, one_hot)");
  return ks;
}

std::string kernel_setting_name(const KernelSetting& ks) {
  if (ks.use_mix) {
    switch (ks.mix.mode) {
      case SelectionMode::Soft: return "soft";
      case SelectionMode::DirectLinear: return "direct_linear";
      case SelectionMode::OneHot: return "one_hot";
    }
  }
  return kernel_family_name(ks.single.family);
}

KernelParams params_of(const KernelSetting& ks) {
  KernelParams p;
  auto pull = [&](const KernelKind& k) {
    switch (k.family) {
      case KernelFamily::Gaussian: p.gaussian_sigma = k.sigma; break;
      case KernelFamily::Laplacian: p.laplacian_sigma = k.sigma; break;
      case KernelFamily::Exponential: p.exponential_sigma = k.sigma; break;
      case KernelFamily::RBFMixture: p.rbf_sigmas = k.sigmas; break;
      case KernelFamily::Matern32:
      case KernelFamily::Matern52:
        p.matern_alpha = k.alpha;
        p.matern_length = k.length;
        break;
    }
  };
  if (ks.use_mix)
    for (const auto& k : ks.mix.components) pull(k);
  else
    pull(ks.single);
  return p;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known_key(key)) throw ConfigError("unknown config key '" + key + "'");

  RunConfig rc;
  TrainConfig& t = rc.train;
  t.dataset = dataset_from_name(get_or<std::string>(j, "dataset", "ring"));
  t.architecture = get_or<std::string>(j, "architecture", "main");
  t.loss = loss_from_name(get_or<std::string>(j, "loss", "ckipm"));

  KernelParams kp;
  kp.gaussian_sigma = get_or<double>(j, "gaussian_sigma", kp.gaussian_sigma);
  kp.laplacian_sigma = get_or<double>(j, "laplacian_sigma", kp.laplacian_sigma);
  kp.exponential_sigma = get_or<double>(j, "exponential_sigma", kp.exponential_sigma);
  kp.matern_alpha = get_or<double>(j, "matern_alpha", kp.matern_alpha);
  kp.matern_length = get_or<double>(j, "matern_length", kp.matern_length);
  kp.rbf_sigmas = get_or<std::vector<double>>(j, "rbf_sigmas", kp.rbf_sigmas);
  t.kernel = make_kernel_setting(get_or<std::string>(j, "kernel", "gaussian"), kp);

  t.lambda = get_or<double>(j, "lambda", 10.0);
  t.learning_rate = get_or<double>(j, "learning_rate", 1e-4);
  t.n_discriminator = get_or<int>(j, "n_discriminator", 5);
  t.batch_size = get_or<long>(j, "batch_size", 64);
  t.full_batch = get_or<bool>(j, "full_batch", true);
  t.iterations = get_or<long>(j, "iterations", t.iterations);
  t.gp_target = gp_target_from_name(get_or<std::string>(j, "gp_target", "witness"));
  t.eval_every = get_or<long>(j, "eval_every", 100);
  t.seed = get_or<std::uint64_t>(j, "seed", 0);
  t.train_size = get_or<long>(j, "train_size", 500);
  t.eval_samples = get_or<long>(j, "eval_samples", 2500);
  t.mmd_unbiased = get_or<bool>(j, "mmd_unbiased", false);
  t.checkpoint_every = get_or<long>(j, "checkpoint_every", 0);
  rc.out_dir = get_or<std::string>(j, "out_dir", ".");

  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return run_config_from_json_text(ss.str());
}

std::string resolved_config_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  KernelParams kp = params_of(t.kernel);
  json j;
  j["dataset"] = dataset_name(t.dataset);
  j["architecture"] = t.architecture;
  j["loss"] = loss_name(t.loss);
  j["kernel"] = kernel_setting_name(t.kernel);
  j["gaussian_sigma"] = kp.gaussian_sigma;
  j["laplacian_sigma"] = kp.laplacian_sigma;
  j["exponential_sigma"] = kp.exponential_sigma;
  j["matern_alpha"] = kp.matern_alpha;
  j["matern_length"] = kp.matern_length;
  j["rbf_sigmas"] = kp.rbf_sigmas;
  j["lambda"] = t.lambda;
  j["learning_rate"] = t.learning_rate;
  j["n_discriminator"] = t.n_discriminator;
  j["batch_size"] = t.batch_size;
  j["full_batch"] = t.full_batch;
  j["iterations"] = t.iterations;
  j["gp_target"] = gp_target_name(t.gp_target);
  j["eval_every"] = t.eval_every;
  j["seed"] = t.seed;
  j["train_size"] = t.train_size;
  j["eval_samples"] = t.eval_samples;
  j["mmd_unbiased"] = t.mmd_unbiased;
  j["checkpoint_every"] = t.checkpoint_every;
  j["out_dir"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  json j;
  try {
    j = json::parse(resolved_config_json(cfg));
  } catch (const json::parse_error& e) {
    throw ConfigError(e.what());
  }
  if (!known_key(key)) throw ConfigError("unknown config key '" + key + "'");
  // Interpret the value as JSON when possible, else as a string.
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;
  }
  j[key] = v;
  cfg = run_config_from_json_text(j.dump());
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'K', 'G', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw CheckpointError("truncated checkpoint");
  return v;
}
std::uint64_t get_u64(std::istream& is) {
  std::uint64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw CheckpointError("truncated checkpoint");
  return v;
}
double get_f64(std::istream& is) {
  double v;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw CheckpointError("truncated checkpoint");
  return v;
}
std::string get_str(std::istream& is) {
  std::uint32_t len = get_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw CheckpointError("truncated checkpoint");
  return s;
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  put_str(os, name);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u64(os, d);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

std::pair<std::string, Tensor> get_tensor(std::istream& is) {
  std::string name = get_str(is);
  std::uint32_t rank = get_u32(is);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get_u64(is));
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw CheckpointError("truncated checkpoint tensor '" + name + "'");
  return {name, std::move(t)};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg,
                     const TrainState& state) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_str(os, resolved_config_json(cfg));
  put_u64(os, static_cast<std::uint64_t>(state.iteration));
  put_f64(os, state.last_loss_d);
  put_f64(os, state.last_loss_g);
  put_f64(os, state.train_seconds);

  std::vector<std::pair<std::string, const Tensor*>> entries;
  for (const auto& n : state.gen.order) entries.push_back({"g." + n, &state.gen.at(n)});
  for (const auto& n : state.disc.order) entries.push_back({"d." + n, &state.disc.at(n)});
  entries.push_back({"xi", &state.xi});
  for (const auto& [n, t] : state.opt_g.accum) entries.push_back({"opt_g." + n, &t});
  for (const auto& [n, t] : state.opt_d.accum) entries.push_back({"opt_d." + n, &t});
  for (const auto& [n, t] : state.opt_xi.accum) entries.push_back({"opt_xi." + n, &t});
  put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) put_tensor(os, name, *t);

  put_u32(os, 3);
  put_str(os, "noise");
  put_str(os, state.noise_stream.serialize());
  put_str(os, "gp");
  put_str(os, state.gp_stream.serialize());
  put_str(os, "batch");
  put_str(os, state.batch_stream.serialize());
  if (!os) throw CheckpointError("write failure on '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot read checkpoint '" + path.string() + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("'" + path.string() + "' is not a checkpoint file");
  std::uint32_t version = get_u32(is);
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  LoadedCheckpoint lc;
  lc.config = run_config_from_json_text(get_str(is));
  lc.state = init_train_state(lc.config.train);
  lc.state.iteration = static_cast<long>(get_u64(is));
  lc.state.last_loss_d = get_f64(is);
  lc.state.last_loss_g = get_f64(is);
  lc.state.train_seconds = get_f64(is);

  std::uint32_t n_tensors = get_u32(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto [name, t] = get_tensor(is);
    Tensor* dst = nullptr;
    if (name == "xi") dst = &lc.state.xi;
    else if (name.rfind("g.", 0) == 0) dst = &lc.state.gen.at(name.substr(2));
    else if (name.rfind("d.", 0) == 0) dst = &lc.state.disc.at(name.substr(2));
    else if (name.rfind("opt_g.", 0) == 0) dst = &lc.state.opt_g.accum.at(name.substr(6));
    else if (name.rfind("opt_d.", 0) == 0) dst = &lc.state.opt_d.accum.at(name.substr(6));
    else if (name.rfind("opt_xi.", 0) == 0) dst = &lc.state.opt_xi.accum.at(name.substr(7));
    if (!dst) throw CheckpointError("unexpected tensor '" + name + "' in checkpoint");
    if (!dst->same_shape(t))
      throw CheckpointError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) +
                            ", expected " + shape_str(dst->shape()));
    *dst = std::move(t);
  }

  std::uint32_t n_rngs = get_u32(is);
  for (std::uint32_t i = 0; i < n_rngs; ++i) {
    std::string name = get_str(is);
    std::string stateText = get_str(is);
    if (name == "noise") lc.state.noise_stream.deserialize(stateText);
    else if (name == "gp") lc.state.gp_stream.deserialize(stateText);
    else if (name == "batch") lc.state.batch_stream.deserialize(stateText);
    else throw CheckpointError("unexpected rng stream '" + name + "'");
  }
  return lc;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string metrics_csv_header() {
  return "iter,modes,hq,kl,loss_d,loss_g,xi_1,xi_2,xi_3,xi_4,xi_5,xi_6,seconds\n";
}

std::string metrics_csv_row(const MetricsReport& r) {
  std::string s = std::to_string(r.iteration);
  s += ',';
  s += std::to_string(r.modes_captured);
  s += ',';
  s += csv_number(r.hq_percent);
  s += ',';
  s += csv_number(r.kl);
  s += ',';
  s += csv_number(r.loss_d);
  s += ',';
  s += csv_number(r.loss_g);
  for (double w : r.xi) {
    s += ',';
    s += csv_number(w);
  }
  s += ',';
  s += csv_number(r.wall_seconds);
  s += '\n';
  return s;
}

void write_points_csv(const std::filesystem::path& path, const Tensor& points) {
  if (points.rank() != 2 || points.dim(1) != 2)
    throw std::invalid_argument("write_points_csv expects an [n x 2] tensor");
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << "x,y\n";
  for (std::size_t i = 0; i < points.dim(0); ++i)
    os << csv_number(points(i, 0)) << ',' << csv_number(points(i, 1)) << '\n';
  if (!os) throw std::runtime_error("write failure on '" + path.string() + "'");
}

Tensor read_points_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::string line;
  std::getline(is, line);  // header
  std::vector<double> vals;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("malformed CSV line: " + line);
    vals.push_back(std::stod(line.substr(0, comma)));
    vals.push_back(std::stod(line.substr(comma + 1)));
  }
  std::size_t n = vals.size() / 2;
  return Tensor({n, 2}, std::move(vals));
}

}  // namespace ckgan
