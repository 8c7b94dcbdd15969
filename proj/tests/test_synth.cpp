#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "digen/synth.hpp"

using namespace digen;

TEST_CASE("er basic behavior") {
  Rng rng(1);
  DiGraph g = gen_er(20, 80, 0.6, false, rng);
  CHECK(g.n >= 20);
  CHECK(g.n <= 80);
  DiGraph empty = gen_er(10, 10, 0.0, false, rng);
  CHECK(empty.num_edges() == 0);
  CHECK_THROWS_AS(gen_er(5, 4, 0.5, false, rng), InvalidParam);
  CHECK_THROWS_AS(gen_er(5, 8, 1.5, false, rng), InvalidParam);
}

TEST_CASE("er edge frequency within 3 sigma") {
  Rng rng(2);
  const double p = 0.6;
  long long edges = 0, pairs = 0;
  while (pairs < 100000) {
    DiGraph g = gen_er(20, 40, p, false, rng);
    edges += g.num_edges();
    pairs += static_cast<long long>(g.n) * (g.n - 1);
  }
  double phat = static_cast<double>(edges) / pairs;
  double sigma = std::sqrt(p * (1 - p) / pairs);
  CHECK(std::abs(phat - p) < 3 * sigma);
}

TEST_CASE("er dag variant is lower-triangular and acyclic") {
  Rng rng(3);
  for (int it = 0; it < 500; ++it) {
    DiGraph g = gen_er(5, 30, 0.3, true, rng);
    CHECK(is_acyclic(g));
    for (int i = 0; i < g.n; ++i)
      for (int j = i; j < g.n; ++j) CHECK(g.edge(i, j) == 0);
  }
}

TEST_CASE("price graphs are acyclic with bounded out-degree") {
  Rng rng(4);
  for (int it = 0; it < 500; ++it) {
    DiGraph g = gen_price(64, 0, rng);  // m defaults to log2(64) = 6
    CHECK(is_acyclic(g));
    for (int v = 6; v < g.n; ++v) {
      int outdeg = 0;
      for (int j = 0; j < g.n; ++j) outdeg += (g.edge(v, j) != 0);
      CHECK(outdeg <= 6);
      CHECK(outdeg >= 1);
    }
  }
  CHECK_THROWS_AS(gen_price(4, 6, rng), InvalidParam);
}

TEST_CASE("price edge count regression band") {
  // Pins the implemented bag scheme; the band comes from simulating this
  // exact update rule, see notes in the module header.
  Rng rng(5);
  double total = 0;
  const int reps = 200;
  for (int it = 0; it < reps; ++it) total += gen_price(64, 6, rng).num_edges();
  double avg = total / reps;
  CHECK(avg > 270.0);
  CHECK(avg < 335.0);
}

TEST_CASE("sbm block rates within 3 sigma") {
  Rng rng(6);
  // Regenerate the block assignment the same way the generator does, by
  // tracking sizes: use a 2-block fixed-size config so membership is known.
  long long intra_e = 0, intra_p = 0, inter_e = 0, inter_p = 0;
  for (int it = 0; it < 30; ++it) {
    DiGraph g = gen_sbm(2, 2, 30, 30, 0.3, 0.05, rng);
    REQUIRE(g.n == 60);
    for (int i = 0; i < g.n; ++i)
      for (int j = 0; j < g.n; ++j) {
        if (i == j) continue;
        bool same = (i < 30) == (j < 30);
        if (same) {
          intra_p++;
          intra_e += (g.edge(i, j) != 0);
        } else {
          inter_p++;
          inter_e += (g.edge(i, j) != 0);
        }
      }
  }
  double pi = static_cast<double>(intra_e) / intra_p;
  double pe = static_cast<double>(inter_e) / inter_p;
  CHECK(std::abs(pi - 0.3) < 3 * std::sqrt(0.3 * 0.7 / intra_p));
  CHECK(std::abs(pe - 0.05) < 3 * std::sqrt(0.05 * 0.95 / inter_p));
}

TEST_CASE("sbm degenerate cases") {
  Rng rng(7);
  DiGraph g = gen_sbm(2, 2, 5, 5, 0.0, 0.0, rng);
  CHECK(g.num_edges() == 0);
  CHECK_THROWS_AS(gen_sbm(1, 5, 20, 40, 0.3, 0.05, rng), InvalidParam);
  CHECK_THROWS_AS(gen_sbm(2, 5, 0, 40, 0.3, 0.05, rng), InvalidParam);
}

static std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

TEST_CASE("make_dataset determinism and per-graph stream isolation") {
  DatasetSpec spec;
  spec.name = "toy-er";
  spec.family = "er_dag";
  spec.seed = 99;
  spec.n_train = 6;
  spec.n_val = 2;
  spec.n_test = 2;
  spec.n_min = 8;
  spec.n_max = 16;
  spec.p = 0.3;
  auto base = std::filesystem::temp_directory_path() / "digen_test_ds";
  std::filesystem::remove_all(base);
  auto m1 = make_dataset(spec, (base / "a").string());
  auto m2 = make_dataset(spec, (base / "b").string());
  CHECK(file_bytes(m1.train_path) == file_bytes(m2.train_path));
  CHECK(file_bytes(m1.val_path) == file_bytes(m2.val_path));
  CHECK(file_bytes(m1.test_path) == file_bytes(m2.test_path));

  auto train = read_graphs(m1.train_path, m1.X, m1.E);
  REQUIRE(static_cast<int>(train.size()) == spec.n_train);
  // regenerating one graph in isolation reproduces it exactly
  CHECK(gen_from_spec(spec, "train", 3) == train[3]);
  CHECK(gen_from_spec(spec, "test", 1) == read_graphs(m1.test_path)[1]);
  for (const auto& g : train) CHECK(is_acyclic(g));
}

TEST_CASE("make_dataset counts 1/1/1") {
  DatasetSpec spec;
  spec.family = "price";
  spec.price_n = 16;
  spec.price_m = 2;
  spec.n_train = spec.n_val = spec.n_test = 1;
  auto base = std::filesystem::temp_directory_path() / "digen_test_ds_small";
  std::filesystem::remove_all(base);
  auto m = make_dataset(spec, base.string());
  CHECK(read_graphs(m.train_path).size() == 1);
  CHECK(read_graphs(m.val_path).size() == 1);
  CHECK(read_graphs(m.test_path).size() == 1);
  auto back = read_manifest((base / "manifest.json").string());
  CHECK(back.meta_json.find("price") != std::string::npos);
}

TEST_CASE("empirical stats point cases") {
  DiGraph a(3);  // all nodes class 1, no edges
  auto s1 = empirical_stats({a}, 1, 2);
  CHECK(s1.m_x[0] == doctest::Approx(1.0));
  CHECK(s1.m_e[0] == doctest::Approx(1.0));
  CHECK(s1.node_counts.at(3) == doctest::Approx(1.0));

  DiGraph b(2);
  b.set_edge(0, 1, 1);
  auto s2 = empirical_stats({b}, 1, 2);
  CHECK(s2.m_e[0] == doctest::Approx(0.5));
  CHECK(s2.m_e[1] == doctest::Approx(0.5));

  CHECK_THROWS_AS(empirical_stats({}, 1, 2), EmptyDataset);
}

TEST_CASE("empirical stats converge to 1-p on an ER corpus") {
  Rng rng(8);
  std::vector<DiGraph> corpus;
  long long pairs = 0;
  while (pairs < 20000) {
    corpus.push_back(gen_er(15, 25, 0.6, false, rng));
    pairs += static_cast<long long>(corpus.back().n) * (corpus.back().n - 1);
  }
  auto s = empirical_stats(corpus, 1, 2);
  CHECK(std::abs(s.m_e[0] - 0.4) < 0.01);
  double total = 0;
  for (auto& [n, w] : s.node_counts) total += w;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}
