#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dyngate/config.hpp"
#include "dyngate/error.hpp"

using namespace dyngate;

namespace {

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value)
      setenv("DYNGATE_SEED", value, 1);
    else
      unsetenv("DYNGATE_SEED");
  }
  ~EnvGuard() { unsetenv("DYNGATE_SEED"); }
};

}  // namespace

TEST_SUITE("config") {

TEST_CASE("key=value parsing with comments and whitespace") {
  Settings s = Settings::from_text(
      "# a comment\n"
      "\n"
      "  train.lr = 0.01  \n"
      "source=photo\n"
      "   # indented comment\n"
      "targets = cartoon, night , sketch\n");
  CHECK(s.has("train.lr"));
  CHECK(s.get_double("train.lr", 0.0) == 0.01);
  CHECK(s.get_string("source", "") == "photo");
  CHECK(s.get_string_list("targets", {}) ==
        std::vector<std::string>{"cartoon", "night", "sketch"});
  CHECK_FALSE(s.has("missing"));
  CHECK(s.get_string("missing", "fallback") == "fallback");
}

TEST_CASE("malformed config lines carry line numbers") {
  CHECK_THROWS_WITH_AS(Settings::from_text("a=1\nb=2\nnot a pair\n"),
                       doctest::Contains("line 3"), ParseError);
  CHECK_THROWS_WITH_AS(Settings::from_text("=4\n"),
                       doctest::Contains("empty key"), ParseError);
  CHECK_THROWS_WITH_AS(Settings::from_text("a=1\na=2\n"),
                       doctest::Contains("duplicate key 'a'"), ParseError);
  CHECK_THROWS_WITH_AS(Settings::from_file("/tmp/dyngate_no_such_config"),
                       doctest::Contains("cannot open config"), FormatError);

  const std::string path = "/tmp/dyngate_config_lineno.cfg";
  {
    std::ofstream os(path);
    os << "ok=1\nbroken line\n";
  }
  CHECK_THROWS_WITH_AS(Settings::from_file(path),
                       doctest::Contains(path.c_str()), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("typed getters parse strictly") {
  Settings s = Settings::from_text(
      "i=42\nneg=-3\nf=2.5\nb1=yes\nb0=off\nbad_int=12x\nbad_f=1..2\n"
      "list=1,2,3\nbad_list=1,,2\nu=18446744073709551615\n");
  CHECK(s.get_int("i", 0) == 42);
  CHECK(s.get_int("neg", 0) == -3);
  CHECK(s.get_double("f", 0.0) == 2.5);
  CHECK(s.get_bool("b1", false));
  CHECK_FALSE(s.get_bool("b0", true));
  CHECK(s.get_bool("absent", true));
  CHECK(s.get_int_list("list", {}) == std::vector<int>{1, 2, 3});
  CHECK(s.get_uint("u", 0) == 18446744073709551615ULL);
  CHECK_THROWS_WITH_AS(s.get_int("bad_int", 0),
                       doctest::Contains("not an integer"), ValidationError);
  CHECK_THROWS_WITH_AS(s.get_double("bad_f", 0.0),
                       doctest::Contains("not a number"), ValidationError);
  CHECK_THROWS_WITH_AS(s.get_bool("bad_int", false),
                       doctest::Contains("not a boolean"), ValidationError);
  CHECK_THROWS_WITH_AS(s.get_int_list("bad_list", {}),
                       doctest::Contains("integer list"), ValidationError);
  CHECK_THROWS_WITH_AS(s.get_uint("neg", 0),
                       doctest::Contains("unsigned"), ValidationError);
}

TEST_CASE("unknown keys are rejected once the run is assembled") {
  Settings s = Settings::from_text("train.epochs=3\ntrain.epchs=4\n");
  CHECK_THROWS_WITH_AS(load_run_settings(s),
                       doctest::Contains("unknown config keys: train.epchs"),
                       ValidationError);

  Settings ok = Settings::from_text("train.epochs=3\n");
  CHECK(load_run_settings(ok).train.epochs == 3);
}

TEST_CASE("run settings defaults match the documentation") {
  Settings s;
  RunSettings run = load_run_settings(s);
  CHECK(run.out_dir == "runs/out");
  CHECK(run.source == "photo");
  CHECK(run.targets ==
        std::vector<std::string>{"cartoon", "night", "sketch"});
  CHECK(run.seed == 1);
  CHECK(run.train.epochs == 70);
  CHECK(run.train.batch == 64);
  CHECK(run.train.lr == 0.001);
  CHECK(run.train.weight_decay == 1e-4);
  CHECK(run.train.momentum == 0.9);
  CHECK_FALSE(run.train.force_open);
  CHECK(run.train.schedule.target_rate == 0.5);
  CHECK(run.train.schedule.alpha == 0.05);
  CHECK(run.train.schedule.lambda_b == 1.0);
  CHECK(run.net.widths == std::vector<int>{16, 32, 64, 128});
  CHECK(run.net.classes == 4);
  CHECK(run.net.variant == Variant::slot);
  CHECK(run.net.fusion.slots == 4);
  CHECK(run.net.fusion.iters == 3);
  CHECK(run.net.gate.threshold == 0.5);
  CHECK(run.backend == kernels::Backend::openmp);
}

TEST_CASE("run settings consume a full config with overrides") {
  Settings s = Settings::from_text(
      "manifest=data/manifest.tsv\n"
      "out_dir=runs/a\n"
      "source=night\n"
      "targets=photo,sketch\n"
      "seed=17\n"
      "train.epochs=5\n"
      "train.batch=8\n"
      "train.lr=0.02\n"
      "train.weight_decay=0\n"
      "train.momentum=0.5\n"
      "train.force_open=true\n"
      "schedule.target_rate=0.25\n"
      "schedule.alpha=0.1\n"
      "schedule.lambda=2\n"
      "net.widths=8,16\n"
      "net.blocks_per_stage=2\n"
      "net.classes=3\n"
      "net.variant=normal\n"
      "net.slots=2\n"
      "net.slot_dim=8\n"
      "net.text_dim=16\n"
      "net.iters=1\n"
      "net.softmax_over_queries=true\n"
      "net.threshold=0.4\n"
      "net.tau=0.5\n"
      "net.base_grid=4\n"
      "net.gate_bias=0.1\n"
      "prompt.tokens=6\n"
      "kernel.backend=serial\n");
  s.apply_assignment("train.lr=0.05");  // CLI override wins
  RunSettings run = load_run_settings(s);
  CHECK(run.manifest == "data/manifest.tsv");
  CHECK(run.out_dir == "runs/a");
  CHECK(run.source == "night");
  CHECK(run.targets == std::vector<std::string>{"photo", "sketch"});
  CHECK(run.seed == 17);
  CHECK(run.train.epochs == 5);
  CHECK(run.train.batch == 8);
  CHECK(run.train.lr == 0.05);
  CHECK(run.train.weight_decay == 0.0);
  CHECK(run.train.momentum == 0.5);
  CHECK(run.train.force_open);
  CHECK(run.train.schedule.target_rate == 0.25);
  CHECK(run.train.schedule.alpha == 0.1);
  CHECK(run.train.schedule.lambda_b == 2.0);
  CHECK(run.net.widths == std::vector<int>{8, 16});
  CHECK(run.net.blocks_per_stage == 2);
  CHECK(run.net.classes == 3);
  CHECK(run.net.variant == Variant::normal);
  CHECK(run.net.fusion.slots == 2);
  CHECK(run.net.fusion.d == 8);
  CHECK(run.net.fusion.d_text == 16);
  CHECK(run.net.fusion.iters == 1);
  CHECK(run.net.fusion.softmax_over_queries);
  CHECK(run.net.gate.threshold == 0.4);
  CHECK(run.net.gate.tau == 0.5);
  CHECK(run.net.gate.base_grid == 4);
  CHECK(run.net.gate_bias_init == 0.1);
  CHECK(run.net.prompt_tokens == 6);
  CHECK(run.backend == kernels::Backend::serial);

  CHECK_THROWS_AS(s.apply_assignment("no_equals_sign"), ValidationError);
}

TEST_CASE("bad run values are rejected") {
  CHECK_THROWS_AS(
      load_run_settings(Settings::from_text("net.variant=fancy\n")),
      ValidationError);
  CHECK_THROWS_AS(
      load_run_settings(Settings::from_text("kernel.backend=gpu\n")),
      ValidationError);
  CHECK_THROWS_AS(
      load_run_settings(Settings::from_text("train.epochs=0\n")),
      ValidationError);
  CHECK_THROWS_AS(
      load_run_settings(Settings::from_text("net.threshold=1.5\n")),
      ValidationError);
}

TEST_CASE("seed falls back to the environment") {
  Settings none;
  {
    EnvGuard env("777");
    CHECK(load_run_settings(none).seed == 777);
  }
  {
    EnvGuard env("777");
    Settings s = Settings::from_text("seed=5\n");
    CHECK(load_run_settings(s).seed == 5);  // explicit key wins
  }
  {
    EnvGuard env("not-a-number");
    CHECK_THROWS_WITH_AS(load_run_settings(none),
                         doctest::Contains("DYNGATE_SEED"), ValidationError);
  }
  {
    EnvGuard env(nullptr);
    CHECK(load_run_settings(none).seed == 1);
  }
}

}  // TEST_SUITE("config")
