// Tests for the command-line front end: argument and config-file parsing with
// precedence rules, usage errors and exit codes, the certificate-check command
// against saved models (including false claims), and run metadata output.
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "robnet/cli.hpp"

using namespace robnet;
using cli::parse_args;
using cli::UsageError;

namespace {

struct TmpDir {
  std::string path;
  explicit TmpDir(const std::string& name)
      : path((std::filesystem::temp_directory_path() / name).string()) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TmpDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return path + "/" + name; }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream oss;
  int code = cli::run(args, oss);
  if (out) *out = oss.str();
  return code;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("argument parsing: precedence, flags, positionals") {
  SECTION("command line overrides config file, config overrides nothing set") {
    TmpDir dir("robnet_cli_cfg");
    write_text(dir.file("run.cfg"),
               "# comment line\n"
               "\n"
               "epochs = 7\n"
               "alpha=0.5\n");
    auto pa = parse_args({"observer", "--config", dir.file("run.cfg"), "--alpha", "0.9"});
    REQUIRE(pa.command == "observer");
    REQUIRE(pa.kv.at("epochs") == "7");
    REQUIRE(pa.kv.at("alpha") == "0.9");
  }
  SECTION("synth is a value-less flag") {
    auto pa = parse_args({"mnist", "--synth"});
    REQUIRE(pa.kv.at("synth") == "1");
  }
  SECTION("certify takes exactly one positional model path") {
    auto pa = parse_args({"certify", "model.txt", "--gamma", "2"});
    REQUIRE(pa.model_path == "model.txt");
    REQUIRE_THROWS_AS(parse_args({"certify", "a.txt", "b.txt"}), UsageError);
    REQUIRE_THROWS_AS(parse_args({"certify"}), UsageError);
  }
  SECTION("rejections") {
    REQUIRE_THROWS_AS(parse_args({}), UsageError);
    REQUIRE_THROWS_AS(parse_args({"frobnicate"}), UsageError);
    REQUIRE_THROWS_AS(parse_args({"contraction-demo", "--gamma", "2"}), UsageError);
    REQUIRE_THROWS_AS(parse_args({"observer", "--alpha"}), UsageError);  // missing value
    REQUIRE_THROWS_AS(parse_args({"observer", "stray"}), UsageError);
    REQUIRE_THROWS_AS(parse_args({"mnist"}), UsageError);  // needs data or synth
    REQUIRE_THROWS_AS(parse_args({"mnist", "--synth", "0"}), UsageError);
  }
  SECTION("config file rejections") {
    TmpDir dir("robnet_cli_badcfg");
    write_text(dir.file("noeq.cfg"), "epochs 7\n");
    REQUIRE_THROWS_AS(parse_args({"observer", "--config", dir.file("noeq.cfg")}), UsageError);
    write_text(dir.file("badkey.cfg"), "gamma=2\n");  // not an observer key
    REQUIRE_THROWS_AS(parse_args({"observer", "--config", dir.file("badkey.cfg")}), UsageError);
    write_text(dir.file("nested.cfg"), "config=other.cfg\n");
    REQUIRE_THROWS_AS(parse_args({"observer", "--config", dir.file("nested.cfg")}), UsageError);
    write_text(dir.file("empty.cfg"), "epochs=\n");
    REQUIRE_THROWS_AS(parse_args({"observer", "--config", dir.file("empty.cfg")}), UsageError);
    REQUIRE_THROWS_AS(parse_args({"observer", "--config", dir.file("missing.cfg")}), UsageError);
  }
}

TEST_CASE("usage errors exit with code 2 and print usage") {
  std::string out;
  REQUIRE(run_cli({"frobnicate"}, &out) == 2);
  REQUIRE(contains(out, "error: unknown command 'frobnicate'"));
  REQUIRE(contains(out, "usage: robnet"));

  REQUIRE(run_cli({"observer", "--epochs", "xyz"}, &out) == 2);
  REQUIRE(contains(out, "malformed value 'xyz' for epochs"));
  REQUIRE(run_cli({"observer", "--epochs", "-3"}, &out) == 2);
  REQUIRE(contains(out, "negative value for epochs"));
  REQUIRE(run_cli({"observer", "--alpha", "1.5"}, &out) == 2);
  REQUIRE(contains(out, "alpha must be in (0, 1]"));
  REQUIRE(run_cli({"rl-box", "--hidden", "8,abc"}, &out) == 2);
  REQUIRE(contains(out, "malformed value"));
  REQUIRE(run_cli({"rl-box", "--hidden", "8,0"}, &out) == 2);
  REQUIRE(run_cli({"mnist", "--synth", "--gamma", "0"}, &out) == 2);
  REQUIRE(contains(out, "gamma must be positive"));
  REQUIRE(run_cli({"contraction-demo", "--seed", "-1"}, &out) == 2);
}

TEST_CASE("help exits cleanly") {
  std::string out;
  REQUIRE(run_cli({"--help"}, &out) == 0);
  REQUIRE(contains(out, "usage: robnet"));
  REQUIRE(contains(out, "contraction-demo"));
  REQUIRE(run_cli({"help"}, &out) == 0);
}

TEST_CASE("contraction-demo command runs, reports, and records metadata") {
  TmpDir dir("robnet_cli_demo");
  std::string out;
  int code = run_cli({"contraction-demo", "--seed", "2", "--out", dir.path}, &out);
  REQUIRE(code == 0);
  REQUIRE(contains(out, "command=contraction-demo"));
  REQUIRE(contains(out, "pass_monotone=1"));
  REQUIRE(contains(out, "pass_geometric=1"));
  REQUIRE(contains(out, "gap_initial="));
  REQUIRE(contains(out, "PASS"));
  REQUIRE(std::filesystem::exists(dir.file("contraction.csv")));

  std::ifstream meta(dir.file("run.meta"));
  REQUIRE(meta.good());
  std::string line;
  std::getline(meta, line);
  REQUIRE(line == "version=0.1.0");
  std::getline(meta, line);
  REQUIRE(line == "command=contraction-demo");

  SECTION("config file sets the rate when the command line does not") {
    write_text(dir.file("demo.cfg"), "alpha=0.5\n");
    int c2 = run_cli({"contraction-demo", "--config", dir.file("demo.cfg"), "--out", dir.path},
                     &out);
    REQUIRE(c2 == 0);
    REQUIRE(contains(out, "alpha=0.5"));
  }
}

TEST_CASE("certify command checks saved models and their claims") {
  TmpDir dir("robnet_cli_cert");

  SECTION("recurrent model with a gain bound") {
    RenDirectParams p =
        init_ren({1, 2, 3, 1}, IqcSpec::lipschitz(3.0), Act::Relu, RenInit::IdentityH, 9);
    save_ren(dir.file("ren.txt"), p);
    std::string out;
    REQUIRE(run_cli({"certify", dir.file("ren.txt"), "--out", dir.path}, &out) == 0);
    REQUIRE(contains(out, "model_kind=ren"));
    REQUIRE(contains(out, "variant=lipschitz"));
    REQUIRE(contains(out, "gamma=3"));
    REQUIRE(contains(out, "lmi_margin="));
    REQUIRE(contains(out, "PASS"));

    // Matching claims pass; a false one is named and fails the run.
    REQUIRE(run_cli({"certify", dir.file("ren.txt"), "--kind", "lipschitz", "--gamma", "3",
                     "--alpha", "1", "--out", dir.path},
                    &out) == 0);
    REQUIRE(run_cli({"certify", dir.file("ren.txt"), "--gamma", "2.5", "--out", dir.path},
                    &out) == 1);
    REQUIRE(contains(out, "claim_mismatch=gamma"));
    REQUIRE(contains(out, "FAIL"));
    REQUIRE(run_cli({"certify", dir.file("ren.txt"), "--kind", "contracting", "--out", dir.path},
                    &out) == 1);
    REQUIRE(contains(out, "claim_mismatch=kind"));
    REQUIRE(run_cli({"certify", dir.file("ren.txt"), "--rho", "0.5", "--out", dir.path}, &out) ==
            1);
    REQUIRE(contains(out, "claim_mismatch=kind"));
  }

  SECTION("feedforward model with a gain bound") {
    LbdnDirectParams p = init_lbdn(2, {4}, 2, 2.0, Act::Relu, 13);
    save_lbdn(dir.file("lbdn.txt"), p);
    std::string out;
    REQUIRE(run_cli({"certify", dir.file("lbdn.txt"), "--out", dir.path}, &out) == 0);
    REQUIRE(contains(out, "model_kind=lbdn"));
    REQUIRE(contains(out, "gamma=2"));
    REQUIRE(contains(out, "max_residual="));
    REQUIRE(contains(out, "PASS"));
    REQUIRE(run_cli({"certify", dir.file("lbdn.txt"), "--kind", "lipschitz", "--gamma", "2",
                     "--out", dir.path},
                    &out) == 0);
    REQUIRE(run_cli({"certify", dir.file("lbdn.txt"), "--gamma", "7", "--out", dir.path},
                    &out) == 1);
    REQUIRE(contains(out, "claim_mismatch=gamma"));
    // Recurrent-only claims are a usage error on a feedforward model.
    REQUIRE(run_cli({"certify", dir.file("lbdn.txt"), "--alpha", "0.9", "--out", dir.path},
                    &out) == 2);
  }

  SECTION("unreadable or unrecognized model files") {
    std::string out;
    REQUIRE(run_cli({"certify", dir.file("missing.txt"), "--out", dir.path}, &out) == 1);
    REQUIRE(contains(out, "error:"));
    write_text(dir.file("junk.txt"), "hello world\n");
    REQUIRE(run_cli({"certify", dir.file("junk.txt"), "--out", dir.path}, &out) == 1);
    REQUIRE(contains(out, "unrecognized model header"));
  }

  SECTION("metadata records the verdict") {
    RenDirectParams p =
        init_ren({1, 1, 2, 1}, IqcSpec::contracting(0.9), Act::Tanh, RenInit::IdentityH, 4);
    save_ren(dir.file("c.txt"), p);
    std::string out;
    REQUIRE(run_cli({"certify", dir.file("c.txt"), "--out", dir.path}, &out) == 0);
    std::ifstream meta(dir.file("run.meta"));
    std::string text((std::istreambuf_iterator<char>(meta)), std::istreambuf_iterator<char>());
    REQUIRE(contains(text, "command=certify"));
    REQUIRE(contains(text, "model_kind=ren"));
    REQUIRE(contains(text, "pass=1"));
  }
}

TEST_CASE("observer command without training is the negative control") {
  TmpDir dir("robnet_cli_obs0");
  std::string out;
  int code = run_cli({"observer", "--epochs", "0", "--seed", "3", "--out", dir.path}, &out);
  REQUIRE(code == 1);  // an untrained estimator misses the accuracy bar
  REQUIRE(contains(out, "command=observer"));
  REQUIRE(contains(out, "pass=0"));
  // Contraction is a construction property, not a training outcome.
  REQUIRE(contains(out, "premise_untrained=1"));
  REQUIRE(contains(out, "premise_trained=1"));
  REQUIRE(contains(out, "FAIL"));
  REQUIRE(std::filesystem::exists(dir.file("observer.csv")));
  REQUIRE(std::filesystem::exists(dir.file("run.meta")));
}
