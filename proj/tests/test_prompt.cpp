#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "dyngate/error.hpp"
#include "dyngate/prompt.hpp"

using namespace dyngate;

namespace {

double row_norm(const Tensor& e, int row) {
  double sq = 0.0;
  for (int i = 0; i < e.dim(1); ++i) {
    const double v = e.data()[row * e.dim(1) + i];
    sq += v * v;
  }
  return std::sqrt(sq);
}

bool same_row(const Tensor& a, int ra, const Tensor& b, int rb) {
  for (int i = 0; i < a.dim(1); ++i) {
    if (a.data()[ra * a.dim(1) + i] != b.data()[rb * b.dim(1) + i])
      return false;
  }
  return true;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& text)
      : path("/tmp/dyngate_prompt_" + name) {
    std::ofstream os(path);
    os << text;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE("prompt") {

TEST_CASE("template expansion") {
  CHECK(expand_template("photo") == "an image taken in photo");
  CHECK(expand_template("night") == "an image taken in night");
  CHECK_THROWS_AS(expand_template(""), ValidationError);
}

TEST_CASE("embedding is deterministic and unit-norm") {
  const Tensor a = embed_text(expand_template("photo"), 32, 8, 7);
  const Tensor b = embed_text(expand_template("photo"), 32, 8, 7);
  REQUIRE(a.shape() == Shape{8, 32});
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
  for (int r = 0; r < 8; ++r) CHECK(std::abs(row_norm(a, r) - 1.0) < 1e-12);
}

TEST_CASE("distinct scenes and seeds give distinct embeddings") {
  const Tensor photo = embed_text(expand_template("photo"), 32, 8, 7);
  const Tensor sketch = embed_text(expand_template("sketch"), 32, 8, 7);
  double diff = 0.0;
  for (int64_t i = 0; i < photo.numel(); ++i)
    diff = std::max(diff, std::abs(photo.data()[i] - sketch.data()[i]));
  CHECK(diff > 1e-3);

  const Tensor other_seed = embed_text(expand_template("photo"), 32, 8, 8);
  diff = 0.0;
  for (int64_t i = 0; i < photo.numel(); ++i)
    diff = std::max(diff, std::abs(photo.data()[i] - other_seed.data()[i]));
  CHECK(diff > 1e-3);
}

TEST_CASE("shared tokens share rows, padding is deterministic") {
  // Both prompts start with the same four template words.
  const Tensor a = embed_text(expand_template("photo"), 16, 8, 3);
  const Tensor b = embed_text(expand_template("night"), 16, 8, 3);
  for (int r = 0; r < 4; ++r) CHECK(same_row(a, r, b, r));
  CHECK_FALSE(same_row(a, 4, b, 4));
  // Five words -> rows 5..7 are padding; padding rows are unit and distinct.
  for (int r = 5; r < 8; ++r) {
    CHECK(std::abs(row_norm(a, r) - 1.0) < 1e-12);
    CHECK(same_row(a, r, b, r));
  }
  CHECK_FALSE(same_row(a, 5, a, 6));
}

TEST_CASE("truncation keeps the first tokens") {
  const Tensor full = embed_text("a b c d e", 16, 5, 1);
  const Tensor cut = embed_text("a b c d e", 16, 3, 1);
  for (int r = 0; r < 3; ++r) CHECK(same_row(cut, r, full, r));
}

TEST_CASE("token position does not change its row") {
  const Tensor a = embed_text("night photo", 16, 2, 5);
  const Tensor b = embed_text("photo night", 16, 2, 5);
  CHECK(same_row(a, 0, b, 1));
  CHECK(same_row(a, 1, b, 0));
}

TEST_CASE("dimension preconditions") {
  CHECK_THROWS_AS(embed_text("x", 7, 8, 0), ValidationError);
  CHECK_THROWS_AS(embed_text("x", 8, 0, 0), ValidationError);
  CHECK_THROWS_AS(PromptTable({7, 8, 0}), ValidationError);
}

TEST_CASE("load_embeddings normalizes and validates") {
  TempFile f("ok.tsv",
             "# two scenes, 2 tokens x 8 dims\n"
             "photo\t2 0 0 0 0 0 0 0  0 3 0 0 0 0 0 0\n"
             "\n"
             "night\t0 0 1 1 0 0 0 0  0.5 0 0 0 0 0 0 0.5\n");
  const auto table = load_embeddings(f.path, 2, 8);
  REQUIRE(table.size() == 2);
  const Tensor& photo = table.at("photo");
  REQUIRE(photo.shape() == Shape{2, 8});
  CHECK(photo.data()[0] == 1.0);  // renormalized
  CHECK(photo.data()[9] == 1.0);
  for (const auto& [name, e] : table) {
    (void)name;
    for (int r = 0; r < 2; ++r) CHECK(std::abs(row_norm(e, r) - 1.0) < 1e-12);
  }
}

TEST_CASE("load_embeddings error reporting") {
  TempFile no_tab("no_tab.tsv", "photo 1 2 3\n");
  CHECK_THROWS_WITH_AS(load_embeddings(no_tab.path, 1, 8),
                       doctest::Contains("line 1"), ParseError);

  TempFile bad_num("bad_num.tsv", "# header\nphoto\t1 2 x 4 5 6 7 8\n");
  CHECK_THROWS_WITH_AS(load_embeddings(bad_num.path, 1, 8),
                       doctest::Contains("line 2"), ParseError);

  TempFile short_row("short.tsv", "photo\t1 2 3\n");
  CHECK_THROWS_AS(load_embeddings(short_row.path, 1, 8), FormatError);

  TempFile zero_row("zero.tsv", "photo\t0 0 0 0 0 0 0 0\n");
  CHECK_THROWS_WITH_AS(load_embeddings(zero_row.path, 1, 8),
                       doctest::Contains("zero norm"), FormatError);

  TempFile dup("dup.tsv",
               "photo\t1 0 0 0 0 0 0 0\nphoto\t0 1 0 0 0 0 0 0\n");
  CHECK_THROWS_WITH_AS(load_embeddings(dup.path, 1, 8),
                       doctest::Contains("duplicate"), FormatError);

  CHECK_THROWS_AS(load_embeddings("/tmp/dyngate_prompt_missing.tsv", 1, 8),
                  FormatError);
}

TEST_CASE("prompt table caches and supports overrides") {
  PromptTable table({16, 8, 11});
  const Tensor& a = table.embedding("photo");
  const Tensor direct = embed_text("an image taken in photo", 16, 8, 11);
  for (int64_t i = 0; i < a.numel(); ++i)
    CHECK(a.data()[i] == direct.data()[i]);
  // Cached: same storage on second lookup.
  CHECK(table.embedding("photo").data() == a.data());

  const Tensor& fb = table.fallback_embedding();
  const Tensor direct_fb = embed_text("an image taken in", 16, 8, 11);
  for (int64_t i = 0; i < fb.numel(); ++i)
    CHECK(fb.data()[i] == direct_fb.data()[i]);

  Tensor repl({8, 16}, 0.25);
  table.set_override("photo", repl);
  CHECK(table.embedding("photo").data()[0] == 0.25);
  CHECK_THROWS_AS(table.set_override("photo", Tensor({2, 16}, 1.0)),
                  ValidationError);
}

}  // TEST_SUITE
