#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "npkit/errors.hpp"
#include "npkit/model.hpp"
#include "npkit/objectives.hpp"

namespace npkit {

struct TrainConfig {
  ObjectiveKind objective = ObjectiveKind::np;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double lr = 5e-4;
  std::vector<std::size_t> lr_milestones;  // epochs after which lr decays
  double lr_factor = 0.1;
  std::uint64_t seed = 0;
  std::size_t n_min = 1, n_max = 200;            // context size ~ [n_min, n_max)
  std::size_t mprime_min = 0, mprime_max = 200;  // extra targets ~ [lo, hi)
  std::size_t sivi_train_k = 16;
  SiviPrior sivi_prior = SiviPrior::standard;
  std::size_t z_samples = 1;
  double grad_clip = 0.0;  // max gradient norm; 0 disables clipping
  std::size_t checkpoint_every = 5;
  std::size_t train_limit = 2000;  // images used from the train split; 0 = all
  std::size_t test_limit = 500;

  void validate() const {
    if (!(lr > 0.0)) throw config_error("train config: lr must be > 0");
    if (batch_size < 1) throw config_error("train config: batch_size >= 1");
    if (epochs < 1) throw config_error("train config: epochs >= 1");
    if (n_min < 1 || n_min >= n_max) {
      throw config_error("train config: need 1 <= n_min < n_max");
    }
    if (mprime_min >= mprime_max) {
      throw config_error("train config: need mprime_min < mprime_max");
    }
    if (z_samples < 1) throw config_error("train config: z_samples >= 1");
    if (!(lr_factor > 0.0)) {
      throw config_error("train config: lr_factor must be > 0");
    }
  }
};

struct DataConfig {
  std::string train_images, train_labels;
  std::string test_images, test_labels;
};

struct FullConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

struct ConfigReader {
  std::map<std::string, std::string> kv;
  std::set<std::string> seen;

  static ConfigReader from_text(const std::string& text) {
    ConfigReader r;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw config_error("config line " + std::to_string(lineno) +
                           ": expected 'key = value'");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw config_error("config line " + std::to_string(lineno) +
                           ": empty key");
      }
      if (r.kv.count(key)) {
        throw config_error("config: duplicate key '" + key + "'");
      }
      r.kv[key] = val;
    }
    return r;
  }

  bool has(const std::string& key) const { return kv.count(key) != 0; }

  template <typename Fn>
  void take(const std::string& key, Fn&& apply) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    seen.insert(key);
    try {
      apply(it->second);
    } catch (const config_error&) {
      throw;
    } catch (const std::exception&) {
      throw config_error("config: cannot parse value for '" + key + "': '" +
                         it->second + "'");
    }
  }

  void reject_unknown() const {
    for (const auto& [k, v] : kv) {
      if (!seen.count(k)) {
        throw config_error("config: unknown key '" + k + "'");
      }
    }
  }
};

inline std::size_t parse_size(const std::string& v) {
  std::size_t pos = 0;
  const long long n = std::stoll(v, &pos);
  if (pos != v.size() || n < 0) throw config_error("not a size: " + v);
  return static_cast<std::size_t>(n);
}

inline double parse_double(const std::string& v) {
  std::size_t pos = 0;
  const double d = std::stod(v, &pos);
  if (pos != v.size()) throw config_error("not a number: " + v);
  return d;
}

inline std::uint64_t parse_u64(const std::string& v) {
  std::size_t pos = 0;
  const unsigned long long n = std::stoull(v, &pos);
  if (pos != v.size()) throw config_error("not an integer: " + v);
  return n;
}

inline std::vector<std::size_t> parse_size_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_size(item));
  }
  return out;
}

template <typename E>
E parse_enum(const std::string& v,
             std::initializer_list<std::pair<const char*, E>> table,
             const char* what) {
  for (const auto& [name, val] : table) {
    if (v == name) return val;
  }
  throw config_error(std::string("config: invalid ") + what + " '" + v + "'");
}

}  // namespace detail

inline const char* to_string(Pooling p) {
  return p == Pooling::mean ? "mean" : "max";
}
inline const char* to_string(HeadKind h) {
  return h == HeadKind::plain ? "plain" : "sivi";
}
inline const char* to_string(ObsVariance o) {
  return o == ObsVariance::fixed ? "fixed" : "learned";
}
inline const char* to_string(LatentSigma l) {
  return l == LatentSigma::narrow ? "narrow" : "wide";
}
inline const char* to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::elbo:
      return "elbo";
    case ObjectiveKind::np:
      return "np";
    case ObjectiveKind::sivi:
      return "sivi";
  }
  return "?";
}
inline const char* to_string(SiviPrior p) {
  return p == SiviPrior::standard ? "standard" : "context";
}

// Parses `key = value` text with '#' comments. Unknown keys are rejected
// unless listed in `extra_keys`, in which case they land in `extras`.
inline FullConfig parse_config(
    const std::string& text,
    const std::set<std::string>* extra_keys = nullptr,
    std::map<std::string, std::string>* extras = nullptr) {
  using detail::parse_double;
  using detail::parse_enum;
  using detail::parse_size;
  using detail::parse_size_list;
  using detail::parse_u64;

  detail::ConfigReader r = detail::ConfigReader::from_text(text);
  FullConfig c;

  auto& m = c.model;
  r.take("d_x", [&](const std::string& v) { m.d_x = parse_size(v); });
  r.take("d_y", [&](const std::string& v) { m.d_y = parse_size(v); });
  r.take("d_h", [&](const std::string& v) { m.d_h = parse_size(v); });
  r.take("d_s", [&](const std::string& v) { m.d_s = parse_size(v); });
  r.take("d_z", [&](const std::string& v) { m.d_z = parse_size(v); });
  r.take("d_psi", [&](const std::string& v) { m.d_psi = parse_size(v); });
  r.take("d_eps", [&](const std::string& v) { m.d_eps = parse_size(v); });
  r.take("pooling", [&](const std::string& v) {
    m.pooling = parse_enum<Pooling>(
        v, {{"mean", Pooling::mean}, {"max", Pooling::max}}, "pooling");
  });
  r.take("head", [&](const std::string& v) {
    m.head = parse_enum<HeadKind>(
        v, {{"plain", HeadKind::plain}, {"sivi", HeadKind::sivi}}, "head");
  });
  r.take("obs_variance", [&](const std::string& v) {
    m.obs_variance = parse_enum<ObsVariance>(
        v, {{"fixed", ObsVariance::fixed}, {"learned", ObsVariance::learned}},
        "obs_variance");
  });
  r.take("sigma0", [&](const std::string& v) { m.sigma0 = parse_double(v); });
  r.take("latent_sigma", [&](const std::string& v) {
    m.latent_sigma = parse_enum<LatentSigma>(
        v, {{"narrow", LatentSigma::narrow}, {"wide", LatentSigma::wide}},
        "latent_sigma");
  });

  auto& t = c.train;
  r.take("objective", [&](const std::string& v) {
    t.objective = parse_enum<ObjectiveKind>(v,
                                            {{"elbo", ObjectiveKind::elbo},
                                             {"np", ObjectiveKind::np},
                                             {"sivi", ObjectiveKind::sivi}},
                                            "objective");
  });
  r.take("batch_size",
         [&](const std::string& v) { t.batch_size = parse_size(v); });
  r.take("epochs", [&](const std::string& v) { t.epochs = parse_size(v); });
  r.take("lr", [&](const std::string& v) { t.lr = parse_double(v); });
  r.take("lr_milestones",
         [&](const std::string& v) { t.lr_milestones = parse_size_list(v); });
  r.take("lr_factor",
         [&](const std::string& v) { t.lr_factor = parse_double(v); });
  r.take("seed", [&](const std::string& v) { t.seed = parse_u64(v); });
  r.take("n_min", [&](const std::string& v) { t.n_min = parse_size(v); });
  r.take("n_max", [&](const std::string& v) { t.n_max = parse_size(v); });
  r.take("mprime_min",
         [&](const std::string& v) { t.mprime_min = parse_size(v); });
  r.take("mprime_max",
         [&](const std::string& v) { t.mprime_max = parse_size(v); });
  r.take("sivi_train_k",
         [&](const std::string& v) { t.sivi_train_k = parse_size(v); });
  r.take("sivi_prior", [&](const std::string& v) {
    t.sivi_prior = parse_enum<SiviPrior>(
        v, {{"standard", SiviPrior::standard}, {"context", SiviPrior::context}},
        "sivi_prior");
  });
  r.take("z_samples",
         [&](const std::string& v) { t.z_samples = parse_size(v); });
  r.take("grad_clip",
         [&](const std::string& v) { t.grad_clip = parse_double(v); });
  r.take("checkpoint_every",
         [&](const std::string& v) { t.checkpoint_every = parse_size(v); });
  r.take("train_limit",
         [&](const std::string& v) { t.train_limit = parse_size(v); });
  r.take("test_limit",
         [&](const std::string& v) { t.test_limit = parse_size(v); });

  auto& d = c.data;
  r.take("train_images", [&](const std::string& v) { d.train_images = v; });
  r.take("train_labels", [&](const std::string& v) { d.train_labels = v; });
  r.take("test_images", [&](const std::string& v) { d.test_images = v; });
  r.take("test_labels", [&](const std::string& v) { d.test_labels = v; });

  if (extra_keys) {
    for (const std::string& k : *extra_keys) {
      r.take(k, [&](const std::string& v) {
        if (extras) (*extras)[k] = v;
      });
    }
  }
  r.reject_unknown();
  c.model.validate();
  c.train.validate();
  return c;
}

// Merge `key=value` overrides into config text; overridden keys replace the
// originals, new keys append.
inline std::string apply_overrides(
    const std::string& text,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  detail::ConfigReader r = detail::ConfigReader::from_text(text);
  for (const auto& [k, v] : overrides) r.kv[k] = v;
  std::ostringstream os;
  for (const auto& [k, v] : r.kv) os << k << " = " << v << "\n";
  return os.str();
}

inline FullConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

// Canonical text form; parse_config(config_to_text(c)) reproduces c.
inline std::string config_to_text(const FullConfig& c) {
  std::ostringstream os;
  os.precision(17);
  const auto& m = c.model;
  os << "d_x = " << m.d_x << "\nd_y = " << m.d_y << "\nd_h = " << m.d_h
     << "\nd_s = " << m.d_s << "\nd_z = " << m.d_z << "\nd_psi = " << m.d_psi
     << "\nd_eps = " << m.d_eps << "\npooling = " << to_string(m.pooling)
     << "\nhead = " << to_string(m.head)
     << "\nobs_variance = " << to_string(m.obs_variance)
     << "\nsigma0 = " << m.sigma0
     << "\nlatent_sigma = " << to_string(m.latent_sigma) << "\n";
  const auto& t = c.train;
  os << "objective = " << to_string(t.objective)
     << "\nbatch_size = " << t.batch_size << "\nepochs = " << t.epochs
     << "\nlr = " << t.lr << "\nlr_milestones = ";
  for (std::size_t i = 0; i < t.lr_milestones.size(); ++i) {
    os << (i ? "," : "") << t.lr_milestones[i];
  }
  os << "\nlr_factor = " << t.lr_factor << "\nseed = " << t.seed
     << "\nn_min = " << t.n_min << "\nn_max = " << t.n_max
     << "\nmprime_min = " << t.mprime_min << "\nmprime_max = " << t.mprime_max
     << "\nsivi_train_k = " << t.sivi_train_k
     << "\nsivi_prior = " << to_string(t.sivi_prior)
     << "\nz_samples = " << t.z_samples << "\ngrad_clip = " << t.grad_clip
     << "\ncheckpoint_every = " << t.checkpoint_every
     << "\ntrain_limit = " << t.train_limit
     << "\ntest_limit = " << t.test_limit << "\n";
  const auto& d = c.data;
  if (!d.train_images.empty()) os << "train_images = " << d.train_images << "\n";
  if (!d.train_labels.empty()) os << "train_labels = " << d.train_labels << "\n";
  if (!d.test_images.empty()) os << "test_images = " << d.test_images << "\n";
  if (!d.test_labels.empty()) os << "test_labels = " << d.test_labels << "\n";
  return os.str();
}

}  // namespace npkit
