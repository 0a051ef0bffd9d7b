#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <set>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "ocds/io.hpp"
#include "ocds/rng.hpp"
#include "ocds/types.hpp"

using namespace ocds;

TEST_CASE("fnv1a64 matches published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("stage_seed is deterministic and separates stages") {
  CHECK(stage_seed(42, "solve") == stage_seed(42, "solve"));
  CHECK(stage_seed(42, "solve") != stage_seed(42, "select"));
  CHECK(stage_seed(42, "solve") != stage_seed(43, "solve"));
}

TEST_CASE("rng streams are reproducible per seed") {
  Rng a(7), b(7), c(8);
  bool same = true, diff = false;
  for (int i = 0; i < 64; ++i) {
    std::uint64_t x = a.next_u64();
    same = same && (x == b.next_u64());
    diff = diff || (x != c.next_u64());
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("next_unit_open stays strictly inside (0, 1)") {
  Rng rng(123);
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double u = rng.next_unit_open();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    mean += u / n;
  }
  CHECK(std::abs(mean - 0.5) < 0.01);
}

TEST_CASE("next_below is bounded and roughly uniform") {
  Rng rng(5);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    std::uint64_t v = rng.next_below(7);
    REQUIRE(v < 7);
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("shuffle permutes without loss") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  Rng rng(99);
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> want(50);
  std::iota(want.begin(), want.end(), 0);
  CHECK(sorted == want);
  std::vector<int> v2(50);
  std::iota(v2.begin(), v2.end(), 0);
  Rng rng2(99);
  rng2.shuffle(v2);
  CHECK(v == v2);
}

TEST_CASE("binary corpus round trip is lossless") {
  testutil::TempDir tmp("ocds_io");
  Dataset d = testutil::token_dataset({{1, 2, 3}, {0}, {4, 4, 4, 4}});
  auto path = tmp.path() / "corpus.bin";
  write_binary_corpus(path, d, 5);
  TokenCorpus back = read_binary_corpus(path);
  CHECK(back.vocab_size == 5);
  REQUIRE(back.data.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.data[i].id == static_cast<std::int64_t>(i));
    CHECK(back.data[i].tokens == d[i].tokens);
  }
  CHECK(file_digest(path) == file_digest(path));
}

TEST_CASE("binary corpus rejects bad magic and truncation") {
  testutil::TempDir tmp("ocds_io_bad");
  auto path = tmp.path() / "corpus.bin";
  write_text_file(path, "NOTMAGIC garbage");
  CHECK_THROWS_AS(read_binary_corpus(path), ConfigError);

  Dataset d = testutil::token_dataset({{1, 2, 3}});
  write_binary_corpus(path, d, 4);
  std::string bytes = read_text_file(path);
  write_text_file(path, bytes.substr(0, bytes.size() - 2));
  CHECK_THROWS_AS(read_binary_corpus(path), ConfigError);
}

TEST_CASE("corpus writer rejects out-of-vocab tokens") {
  testutil::TempDir tmp("ocds_io_oov");
  Dataset d = testutil::token_dataset({{1, 9}});
  CHECK_THROWS_AS(write_binary_corpus(tmp.path() / "c.bin", d, 4), ConfigError);
}

TEST_CASE("text corpus tokenizers") {
  testutil::TempDir tmp("ocds_text");
  write_text_file(tmp.path() / "vocab.txt", "the\ncat\nsat\n");
  Vocab vocab = read_vocab(tmp.path() / "vocab.txt");
  CHECK(vocab.size() == 3);

  write_text_file(tmp.path() / "corpus.txt", "the cat\nsat sat the\n");
  TokenCorpus c = read_text_corpus(tmp.path() / "corpus.txt", vocab,
                                   TokenizerMode::kWhitespace);
  REQUIRE(c.data.size() == 2);
  CHECK(c.data[0].tokens == std::vector<std::uint32_t>{0, 1});
  CHECK(c.data[1].tokens == std::vector<std::uint32_t>{2, 2, 0});

  write_text_file(tmp.path() / "bad.txt", "the dog\n");
  CHECK_THROWS_WITH_AS(
      read_text_corpus(tmp.path() / "bad.txt", vocab, TokenizerMode::kWhitespace),
      doctest::Contains("dog"), ConfigError);
}

TEST_CASE("character tokenizer handles multi-byte code points") {
  testutil::TempDir tmp("ocds_char");
  write_text_file(tmp.path() / "vocab.txt", "a\nb\n\xC3\xA9\n");
  Vocab vocab = read_vocab(tmp.path() / "vocab.txt");
  write_text_file(tmp.path() / "corpus.txt", "ab\xC3\xA9\n");
  TokenCorpus c = read_text_corpus(tmp.path() / "corpus.txt", vocab,
                                   TokenizerMode::kCharacter);
  REQUIRE(c.data.size() == 1);
  CHECK(c.data[0].tokens == std::vector<std::uint32_t>{0, 1, 2});
}

TEST_CASE("vocab rejects duplicate tokens") {
  testutil::TempDir tmp("ocds_vocab_dup");
  write_text_file(tmp.path() / "vocab.txt", "a\nb\na\n");
  CHECK_THROWS_AS(read_vocab(tmp.path() / "vocab.txt"), ConfigError);
}

TEST_CASE("checkpoint round trip is bit exact") {
  testutil::TempDir tmp("ocds_ckpt");
  ParamVector theta{1.0, -0.0, 1e-308, 3.141592653589793, -2.5e17};
  auto path = tmp.path() / checkpoint_filename(17);
  CHECK(path.filename().string() == "ckpt_000017.bin");
  write_checkpoint(path, theta);
  ParamVector back = read_checkpoint(path);
  CHECK(testutil::bitwise_equal(theta, back));
}

TEST_CASE("id-value tsv round trip") {
  testutil::TempDir tmp("ocds_tsv");
  std::vector<std::int64_t> ids{0, 3, 7};
  std::vector<double> values{0.125, -1.75e-9, 42.0};
  auto path = tmp.path() / "scores.tsv";
  write_id_value_tsv(path, "score", ids, values);
  IdValueTable t = read_id_value_tsv(path);
  CHECK(t.ids == ids);
  CHECK(testutil::bitwise_equal(t.values, values));
}

TEST_CASE("loss point csv round trip and validation") {
  testutil::TempDir tmp("ocds_csv");
  std::vector<LossPoint> pts{{1e8, 1e9, 3.5}, {2e8, 5e9, 3.1}};
  auto path = tmp.path() / "points.csv";
  write_loss_points(path, pts);
  auto back = read_loss_points(path);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].n == pts[i].n);
    CHECK(back[i].d == pts[i].d);
    CHECK(back[i].loss == pts[i].loss);
  }
  write_text_file(path, "N,D,L\n-1,2,3\n");
  CHECK_THROWS_AS(read_loss_points(path), ConfigError);
  write_text_file(path, "X,D,L\n1,2,3\n");
  CHECK_THROWS_AS(read_loss_points(path), ConfigError);
}

TEST_CASE("file digest distinguishes contents") {
  testutil::TempDir tmp("ocds_digest");
  write_text_file(tmp.path() / "a.txt", "abc");
  write_text_file(tmp.path() / "b.txt", "abd");
  CHECK(file_digest(tmp.path() / "a.txt") == hex64(fnv1a64("abc")));
  CHECK(file_digest(tmp.path() / "a.txt") != file_digest(tmp.path() / "b.txt"));
}

TEST_CASE("dataset id validation and renumbering") {
  Dataset d = testutil::token_dataset({{1}, {2}});
  CHECK_NOTHROW(d.validate_ids());
  d.instances[1].id = 5;
  CHECK_THROWS_AS(d.validate_ids(), ConfigError);
  d.renumber();
  CHECK_NOTHROW(d.validate_ids());
}
