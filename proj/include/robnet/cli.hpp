#pragma once
// Command-line front end: flag/config-file parsing with strict key checking,
// per-command dispatch, run metadata, and exit codes (0 success, 1 failed
// certification or acceptance, 2 usage errors).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "robnet/certify.hpp"
#include "robnet/experiments.hpp"
#include "robnet/lbdn.hpp"
#include "robnet/linalg.hpp"
#include "robnet/ren.hpp"

namespace robnet {
namespace cli {

inline constexpr const char* kVersion = "0.1.0";

struct UsageError : Error {
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

struct ParsedArgs {
  std::string command;
  std::map<std::string, std::string> kv;  // merged config-file + command line
  std::string model_path;                 // certify positional
};

inline void usage(std::ostream& os) {
  os << "usage: robnet COMMAND [options]\n"
        "\n"
        "commands:\n"
        "  contraction-demo   two trajectories of a contracting model [--alpha A]\n"
        "  mnist              classification + robustness sweep [--data-dir D | --synth]\n"
        "                     [--gamma G --epochs N --lr R --hidden a,b,...]\n"
        "  rl-box             box tracking policy [--gamma G --epochs N --lr R --hidden a,b,...]\n"
        "  observer           box state estimator [--epochs N --lr R --alpha A]\n"
        "  certify MODEL      independent certificate check [--kind K --gamma G\n"
        "                     --alpha A --nu-passivity V --rho R]\n"
        "  bench              construction-caching benchmark [--epochs N]\n"
        "\n"
        "common options:\n"
        "  --seed N      master seed (default 0)\n"
        "  --out DIR     output directory (default ./out)\n"
        "  --config FILE key=value file, '#' comments; command line wins\n";
}

namespace detail {

inline const std::set<std::string>& command_keys(const std::string& cmd) {
  static const std::map<std::string, std::set<std::string>> keys{
      {"contraction-demo", {"alpha"}},
      {"mnist", {"data-dir", "synth", "gamma", "epochs", "lr", "hidden"}},
      {"rl-box", {"gamma", "epochs", "lr", "hidden"}},
      {"observer", {"epochs", "lr", "alpha"}},
      {"bench", {"epochs"}},
      {"certify", {"kind", "gamma", "alpha", "nu-passivity", "rho"}},
  };
  auto it = keys.find(cmd);
  if (it == keys.end()) throw UsageError("unknown command '" + cmd + "'");
  return it->second;
}

inline bool key_allowed(const std::string& cmd, const std::string& key) {
  if (key == "seed" || key == "out") return true;
  const auto& ks = command_keys(cmd);
  return ks.count(key) > 0;
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline void parse_config_file(const std::string& path, const std::string& cmd,
                              std::map<std::string, std::string>& kv) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open config file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                       s + "'");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty() || value.empty())
      throw UsageError("config line " + std::to_string(lineno) + ": empty key or value");
    if (key == "config")
      throw UsageError("config line " + std::to_string(lineno) + ": nested config not allowed");
    if (!key_allowed(cmd, key))
      throw UsageError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                       "' for command '" + cmd + "'");
    kv[key] = value;  // later command-line values overwrite
  }
}

inline double to_double(const std::string& key, const std::string& s) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw UsageError("malformed value '" + s + "' for " + key);
  }
}

inline long long to_int(const std::string& key, const std::string& s) {
  try {
    size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw UsageError("malformed value '" + s + "' for " + key);
  }
}

inline uint64_t to_u64(const std::string& key, const std::string& s) {
  try {
    size_t pos = 0;
    unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size() || s[0] == '-') throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw UsageError("malformed value '" + s + "' for " + key);
  }
}

inline bool to_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw UsageError("malformed value '" + s + "' for " + key + " (want 0/1/true/false)");
}

inline std::vector<int> to_hidden(const std::string& key, const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    long long v = to_int(key, trim(tok));
    if (v < 1) throw UsageError("malformed value '" + s + "' for " + key + " (widths >= 1)");
    out.push_back(static_cast<int>(v));
  }
  if (out.empty()) throw UsageError("malformed value '" + s + "' for " + key);
  return out;
}

struct KvView {
  const std::map<std::string, std::string>* kv;
  bool has(const std::string& k) const { return kv->count(k) > 0; }
  std::string gets(const std::string& k, const std::string& dflt) const {
    auto it = kv->find(k);
    return it == kv->end() ? dflt : it->second;
  }
  double getd(const std::string& k, double dflt) const {
    auto it = kv->find(k);
    return it == kv->end() ? dflt : to_double(k, it->second);
  }
  int geti(const std::string& k, int dflt) const {
    auto it = kv->find(k);
    if (it == kv->end()) return dflt;
    long long v = to_int(k, it->second);
    if (v < 0) throw UsageError("negative value for " + k);
    return static_cast<int>(v);
  }
  uint64_t getu(const std::string& k, uint64_t dflt) const {
    auto it = kv->find(k);
    return it == kv->end() ? dflt : to_u64(k, it->second);
  }
  bool getb(const std::string& k, bool dflt) const {
    auto it = kv->find(k);
    return it == kv->end() ? dflt : to_bool(k, it->second);
  }
  std::vector<int> geth(const std::string& k, std::vector<int> dflt) const {
    auto it = kv->find(k);
    return it == kv->end() ? dflt : to_hidden(k, it->second);
  }
};

inline void write_run_meta(const std::string& out_dir,
                           const std::vector<std::pair<std::string, std::string>>& fields) {
  std::filesystem::create_directories(out_dir);
  std::ofstream os(out_dir + "/run.meta", std::ios::binary);
  if (!os) throw DataError("cannot write " + out_dir + "/run.meta");
  os << "version=" << kVersion << "\n";
  for (const auto& [k, v] : fields) os << k << "=" << v << "\n";
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_hidden(const std::vector<int>& h) {
  std::string s;
  for (size_t i = 0; i < h.size(); ++i) s += (i ? "," : "") + std::to_string(h[i]);
  return s;
}

}  // namespace detail

inline ParsedArgs parse_args(const std::vector<std::string>& args) {
  if (args.empty()) throw UsageError("no command given");
  ParsedArgs pa;
  pa.command = args[0];
  detail::command_keys(pa.command);  // validates the command name

  std::map<std::string, std::string> cmdline;
  std::string config_path;
  for (size_t i = 1; i < args.size(); ++i) {
    const std::string& tok = args[i];
    if (tok.rfind("--", 0) == 0) {
      std::string key = tok.substr(2);
      if (key == "synth") {
        if (!detail::key_allowed(pa.command, key))
          throw UsageError("unknown flag '--" + key + "' for command '" + pa.command + "'");
        cmdline[key] = "1";
        continue;
      }
      if (key != "config" && !detail::key_allowed(pa.command, key))
        throw UsageError("unknown flag '--" + key + "' for command '" + pa.command + "'");
      if (i + 1 >= args.size()) throw UsageError("missing value for '--" + key + "'");
      const std::string& value = args[++i];
      if (key == "config")
        config_path = value;
      else
        cmdline[key] = value;
    } else {
      if (pa.command != "certify")
        throw UsageError("unexpected positional argument '" + tok + "'");
      if (!pa.model_path.empty())
        throw UsageError("extra positional argument '" + tok + "'");
      pa.model_path = tok;
    }
  }
  if (!config_path.empty()) detail::parse_config_file(config_path, pa.command, pa.kv);
  for (const auto& [k, v] : cmdline) pa.kv[k] = v;  // command line wins

  if (pa.command == "certify" && pa.model_path.empty())
    throw UsageError("certify needs a model file path");
  if (pa.command == "mnist" && !pa.kv.count("data-dir") &&
      !(pa.kv.count("synth") && detail::to_bool("synth", pa.kv.at("synth"))))
    throw UsageError("mnist needs --data-dir DIR or --synth");
  return pa;
}

namespace detail {

inline int run_contraction(const KvView& kv, std::ostream& os) {
  uint64_t seed = kv.getu("seed", 0);
  std::string out = kv.gets("out", "./out");
  double alpha = kv.getd("alpha", 0.95);
  if (!(alpha > 0.0 && alpha <= 1.0)) throw UsageError("alpha must be in (0, 1]");
  auto res = exp_contraction_demo(seed, out, alpha);
  write_run_meta(out, {{"command", "contraction-demo"},
                       {"seed", std::to_string(seed)},
                       {"out", out},
                       {"alpha", fmt(alpha)}});
  os << "command=contraction-demo\n"
     << "alpha=" << fmt(alpha) << "\n"
     << "gap_initial=" << fmt(res.trace.r.front()) << "\n"
     << "gap_final=" << fmt(res.trace.r.back()) << "\n"
     << "pass_monotone=" << (res.pass_monotone ? 1 : 0) << "\n"
     << "pass_geometric=" << (res.pass_geometric ? 1 : 0) << "\n";
  bool ok = res.pass_monotone && res.pass_geometric;
  os << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

inline int run_mnist(const KvView& kv, std::ostream& os) {
  MnistConfig cfg;
  uint64_t seed = kv.getu("seed", 0);
  std::string out = kv.gets("out", "./out");
  cfg.data_dir = kv.gets("data-dir", "");
  cfg.synth = kv.getb("synth", false);
  cfg.gamma = kv.getd("gamma", cfg.gamma);
  cfg.epochs1 = kv.geti("epochs", cfg.epochs1);
  cfg.lr1 = kv.getd("lr", cfg.lr1);
  cfg.hidden = kv.geth("hidden", cfg.hidden);
  if (cfg.gamma <= 0.0) throw UsageError("gamma must be positive");
  auto res = exp_mnist(cfg, seed, out);
  write_run_meta(out, {{"command", "mnist"},
                       {"seed", std::to_string(seed)},
                       {"out", out},
                       {"data_dir", cfg.data_dir},
                       {"synth", res.used_synth ? "1" : "0"},
                       {"gamma", fmt(cfg.gamma)},
                       {"epochs", std::to_string(cfg.epochs1)},
                       {"epochs_fine", std::to_string(cfg.epochs2)},
                       {"lr", fmt(cfg.lr1)},
                       {"lr_fine", fmt(cfg.lr2)},
                       {"hidden", fmt_hidden(cfg.hidden)},
                       {"batch", std::to_string(cfg.batch)}});
  os << "command=mnist\n"
     << "used_synth=" << (res.used_synth ? 1 : 0) << "\n"
     << "lbdn_train_acc=" << fmt(res.lbdn_train_acc) << "\n"
     << "lbdn_test_acc=" << fmt(res.lbdn_test_acc) << "\n"
     << "dense_train_acc=" << fmt(res.dense_train_acc) << "\n"
     << "dense_test_acc=" << fmt(res.dense_test_acc) << "\n"
     << "cert_pass=" << (res.cert.passed ? 1 : 0) << "\n"
     << "cert_max_residual=" << fmt(res.cert.max_residual) << "\n"
     << "cert_gamma=" << fmt(res.cert.gamma_bound) << "\n";
  for (const auto& s : res.sweep)
    os << "sweep_eps_" << fmt(s[0]) << "=" << fmt(s[1]) << "," << fmt(s[2]) << "\n";
  os << (res.cert.passed ? "PASS" : "FAIL") << "\n";
  return res.cert.passed ? 0 : 1;
}

inline int run_rl(const KvView& kv, std::ostream& os) {
  RlConfig cfg;
  uint64_t seed = kv.getu("seed", 0);
  std::string out = kv.gets("out", "./out");
  cfg.gamma = kv.getd("gamma", cfg.gamma);
  cfg.epochs = kv.geti("epochs", cfg.epochs);
  cfg.lr = kv.getd("lr", cfg.lr);
  cfg.hidden = kv.geth("hidden", cfg.hidden);
  if (cfg.gamma <= 0.0) throw UsageError("gamma must be positive");
  auto res = exp_rl_train(cfg, seed, out);
  write_run_meta(out, {{"command", "rl-box"},
                       {"seed", std::to_string(seed)},
                       {"out", out},
                       {"gamma", fmt(cfg.gamma)},
                       {"epochs", std::to_string(cfg.epochs)},
                       {"lr", fmt(cfg.lr)},
                       {"hidden", fmt_hidden(cfg.hidden)},
                       {"goals", std::to_string(cfg.batches)},
                       {"test_goals", std::to_string(cfg.test_goals)}});
  os << "command=rl-box\n"
     << "final_loss=" << fmt(res.history.epoch_mean_loss.empty() ? 0.0
                                                                 : res.history.epoch_mean_loss.back())
     << "\n"
     << "mean_terminal_pos_err=" << fmt(res.mean_terminal_pos_err) << "\n"
     << "mean_terminal_force_err=" << fmt(res.mean_terminal_force_err) << "\n"
     << "pass_pos=" << (res.pass_pos ? 1 : 0) << "\n"
     << "pass_force=" << (res.pass_force ? 1 : 0) << "\n";
  bool ok = res.pass_pos && res.pass_force;
  os << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

inline int run_observer(const KvView& kv, std::ostream& os) {
  ObserverConfig cfg;
  uint64_t seed = kv.getu("seed", 0);
  std::string out = kv.gets("out", "./out");
  cfg.epochs = kv.geti("epochs", cfg.epochs);
  cfg.lr = kv.getd("lr", cfg.lr);
  cfg.alpha = kv.getd("alpha", cfg.alpha);
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) throw UsageError("alpha must be in (0, 1]");
  auto res = exp_observer(cfg, seed, out);
  write_run_meta(out, {{"command", "observer"},
                       {"seed", std::to_string(seed)},
                       {"out", out},
                       {"epochs", std::to_string(cfg.epochs)},
                       {"lr", fmt(cfg.lr)},
                       {"alpha", fmt(cfg.alpha)},
                       {"nv", std::to_string(cfg.nv)},
                       {"train_batches", std::to_string(cfg.nbatch)},
                       {"test_batches", std::to_string(cfg.test_batches)}});
  os << "command=observer\n"
     << "final_loss=" << fmt(res.history.epoch_mean_loss.empty() ? 0.0
                                                                 : res.history.epoch_mean_loss.back())
     << "\n"
     << "mean_final_err=" << fmt(res.mean_final_err) << "\n"
     << "premise_untrained=" << (res.premise_untrained.ok ? 1 : 0) << "\n"
     << "premise_trained=" << (res.premise_trained.ok ? 1 : 0) << "\n"
     << "pass=" << (res.pass ? 1 : 0) << "\n"
     << (res.pass ? "PASS" : "FAIL") << "\n";
  return res.pass ? 0 : 1;
}

inline int run_bench(const KvView& kv, std::ostream& os) {
  uint64_t seed = kv.getu("seed", 0);
  std::string out = kv.gets("out", "./out");
  int epochs = kv.geti("epochs", 100);
  std::vector<int> sizes;
  for (int n = 2; n <= 512; n *= 2) sizes.push_back(n);
  auto res = bench_modes(sizes, epochs, seed, out);
  write_run_meta(out, {{"command", "bench"},
                       {"seed", std::to_string(seed)},
                       {"out", out},
                       {"epochs", std::to_string(epochs)}});
  os << "command=bench\n";
  bool audit_ok = true;
  for (const auto& r : res.rows) {
    os << "n=" << r.n << " t_cached=" << fmt(r.t_cached) << " t_rebuild=" << fmt(r.t_rebuild)
       << " ratio=" << fmt(r.t_cached > 0 ? r.t_rebuild / r.t_cached : 0.0) << "\n";
    if (r.conv_cached != epochs ||
        r.conv_rebuild != static_cast<int64_t>(epochs) * res.steps_per_epoch)
      audit_ok = false;
  }
  os << "conversions_per_loss_cached=1\n"
     << "conversions_per_loss_rebuild=" << res.steps_per_epoch << "\n"
     << "audit_ok=" << (audit_ok ? 1 : 0) << "\n"
     << (audit_ok ? "PASS" : "FAIL") << "\n";
  return audit_ok ? 0 : 1;
}

inline std::string sniff_model_kind(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open model file '" + path + "'");
  std::string tok;
  is >> tok;
  if (tok == "renv1") return "ren";
  if (tok == "lbdnv1") return "lbdn";
  throw FormatError("unrecognized model header '" + tok + "' in " + path);
}

inline bool close_rel(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

inline int run_certify(const KvView& kv, const std::string& model_path, std::ostream& os) {
  uint64_t seed = kv.getu("seed", 0);
  std::string out = kv.gets("out", "./out");
  std::string kind_claim = kv.gets("kind", "");
  std::string model_kind = sniff_model_kind(model_path);
  bool pass = false;
  std::vector<std::string> mismatches;
  auto claim_check = [&](bool ok, const std::string& what) {
    if (!ok) mismatches.push_back(what);
  };

  os << "command=certify\n"
     << "model=" << model_path << "\n"
     << "model_kind=" << model_kind << "\n";
  if (model_kind == "lbdn") {
    LbdnDirectParams p = load_lbdn(model_path);
    if (!kind_claim.empty()) claim_check(kind_claim == "lipschitz", "kind");
    if (kv.has("gamma")) claim_check(close_rel(kv.getd("gamma", 0), p.gamma), "gamma");
    if (kv.has("alpha") || kv.has("nu-passivity") || kv.has("rho"))
      throw UsageError("alpha/nu-passivity/rho do not apply to this model");
    LbdnReport rep = certify_lbdn(p);
    pass = rep.passed && mismatches.empty();
    os << "gamma=" << fmt(p.gamma) << "\n"
       << "max_residual=" << fmt(rep.max_residual) << "\n"
       << "tolerance=" << fmt(rep.tolerance) << "\n";
  } else {
    RenDirectParams p = load_ren(model_path);
    const IqcSpec& spec = p.spec;
    static const std::map<RenVariant, std::string> names{
        {RenVariant::Contracting, "contracting"},
        {RenVariant::Lipschitz, "lipschitz"},
        {RenVariant::PassiveInput, "passive-input"},
        {RenVariant::PassiveOutput, "passive-output"},
        {RenVariant::General, "general"}};
    if (!kind_claim.empty()) claim_check(kind_claim == names.at(spec.kind), "kind");
    if (kv.has("alpha")) claim_check(close_rel(kv.getd("alpha", 0), spec.alpha), "alpha");
    if (kv.has("gamma")) {
      claim_check(spec.kind == RenVariant::Lipschitz, "kind");
      claim_check(close_rel(kv.getd("gamma", 0), spec.gamma), "gamma");
    }
    if (kv.has("nu-passivity")) {
      claim_check(spec.kind == RenVariant::PassiveInput, "kind");
      claim_check(close_rel(kv.getd("nu-passivity", 0), spec.nu_passive), "nu-passivity");
    }
    if (kv.has("rho")) {
      claim_check(spec.kind == RenVariant::PassiveOutput, "kind");
      claim_check(close_rel(kv.getd("rho", 0), spec.rho), "rho");
    }
    auto [m, cert] = ren_to_explicit(p);
    LmiReport rep = verify_ren(m, cert);
    pass = rep.passed && mismatches.empty();
    os << "variant=" << names.at(spec.kind) << "\n"
       << "alpha=" << fmt(spec.alpha) << "\n";
    if (spec.kind == RenVariant::Lipschitz) os << "gamma=" << fmt(m.spec.gamma) << "\n";
    if (spec.kind == RenVariant::PassiveInput) os << "nu_passivity=" << fmt(spec.nu_passive) << "\n";
    if (spec.kind == RenVariant::PassiveOutput) os << "rho=" << fmt(spec.rho) << "\n";
    os << "contraction_only=" << (rep.contraction_only ? 1 : 0) << "\n"
       << "lmi_margin=" << fmt(rep.lmi_margin) << "\n"
       << "tolerance=" << fmt(rep.tolerance) << "\n"
       << "min_p_eig=" << fmt(rep.min_p_eig) << "\n"
       << "min_lambda=" << fmt(rep.min_lambda) << "\n";
  }
  for (const auto& m : mismatches) os << "claim_mismatch=" << m << "\n";
  write_run_meta(out, {{"command", "certify"},
                       {"seed", std::to_string(seed)},
                       {"out", out},
                       {"model", model_path},
                       {"model_kind", model_kind},
                       {"pass", pass ? "1" : "0"}});
  os << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 1;
}

}  // namespace detail

// Entry point used by the binary and the tests. Returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& os) {
  if (!args.empty() && (args[0] == "--help" || args[0] == "-h" || args[0] == "help")) {
    usage(os);
    return 0;
  }
  try {
    ParsedArgs pa = parse_args(args);
    detail::KvView kv{&pa.kv};
    if (pa.command == "contraction-demo") return detail::run_contraction(kv, os);
    if (pa.command == "mnist") return detail::run_mnist(kv, os);
    if (pa.command == "rl-box") return detail::run_rl(kv, os);
    if (pa.command == "observer") return detail::run_observer(kv, os);
    if (pa.command == "bench") return detail::run_bench(kv, os);
    if (pa.command == "certify") return detail::run_certify(kv, pa.model_path, os);
    throw UsageError("unknown command '" + pa.command + "'");
  } catch (const UsageError& e) {
    os << "error: " << e.what() << "\n";
    usage(os);
    return 2;
  } catch (const std::exception& e) {
    os << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace cli
}  // namespace robnet
