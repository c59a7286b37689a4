#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "casdc/container.hpp"
#include "casdc/dataset.hpp"
#include "casdc/errors.hpp"
#include "test_support.hpp"

using namespace casdc;
using casdc_test::TempDir;

namespace {

bool disjoint(const std::vector<int>& a, const std::vector<int>& b) {
  for (int x : a)
    if (std::binary_search(b.begin(), b.end(), x)) return false;
  return true;
}

}  // namespace

TEST_CASE("make_partition sizes and determinism") {
  std::vector<int> ten;
  for (int i = 0; i < 10; ++i) ten.push_back(i);

  const ClassPartition p = make_partition(ten, 6, 0.5, 0);
  CHECK(p.known.size() == 6);
  CHECK(p.known_unknown.size() == 2);
  CHECK(p.unknown_unknown.size() == 2);

  const ClassPartition q = make_partition(ten, 6, 0.5, 0);
  CHECK(p.known == q.known);
  CHECK(p.known_unknown == q.known_unknown);
  CHECK(p.unknown_unknown == q.unknown_unknown);

  const ClassPartition r = make_partition(ten, 6, 0.5, 7);
  CHECK(r.known.size() == 6);
  CHECK(p.known != r.known);  // different seed reshuffles (true for 0 vs 7)

  const ClassPartition full = make_partition(ten, 6, 1.0, 0);
  CHECK(full.known_unknown.size() == 4);
  CHECK(full.unknown_unknown.empty());

  std::vector<int> many;
  for (int i = 0; i < 200; ++i) many.push_back(i);
  const ClassPartition tiny = make_partition(many, 20, 0.5, 3);
  CHECK(tiny.known.size() == 20);
  CHECK(tiny.known_unknown.size() == 90);
  CHECK(tiny.unknown_unknown.size() == 90);
}

TEST_CASE("make_partition error and rounding-note cases") {
  std::vector<int> ten;
  for (int i = 0; i < 10; ++i) ten.push_back(i);

  CHECK_THROWS_AS(make_partition(ten, 10, 0.5, 0), DataError);
  CHECK_THROWS_AS(make_partition(ten, 12, 0.5, 0), DataError);
  CHECK_THROWS_AS(make_partition(ten, 6, 1.5, 0), DataError);

  // 4 non-known classes at 10% rounds to zero KU classes: note, not error.
  const ClassPartition p = make_partition(ten, 6, 0.1, 0);
  CHECK(p.known_unknown.empty());
  CHECK(!p.note.empty());

  // Round half up: 0.5 * 5 = 2.5 -> 3.
  std::vector<int> eleven = ten;
  eleven.push_back(10);
  const ClassPartition q = make_partition(eleven, 6, 0.5, 0);
  CHECK(q.known_unknown.size() == 3);
  CHECK(q.unknown_unknown.size() == 2);
}

TEST_CASE("make_partition invariants over random configurations") {
  std::mt19937_64 gen(42);
  for (int iter = 0; iter < 50; ++iter) {
    const int total = 3 + static_cast<int>(gen() % 40);
    std::vector<int> classes;
    for (int i = 0; i < total; ++i)
      classes.push_back(static_cast<int>(gen() % 1000));
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    if (classes.size() < 3) continue;
    const int n_known = 1 + static_cast<int>(gen() % (classes.size() - 1));
    const double frac = static_cast<double>(gen() % 101) / 100.0;

    const ClassPartition p = make_partition(classes, n_known, frac, gen());
    CHECK(p.known.size() == static_cast<std::size_t>(n_known));
    CHECK(disjoint(p.known, p.known_unknown));
    CHECK(disjoint(p.known, p.unknown_unknown));
    CHECK(disjoint(p.known_unknown, p.unknown_unknown));
    CHECK(p.known.size() + p.known_unknown.size() + p.unknown_unknown.size() ==
          classes.size());

    // KU count follows the round-half-up convention.
    const std::size_t remaining = classes.size() - p.known.size();
    const std::size_t expect_ku = static_cast<std::size_t>(
        std::floor(frac * static_cast<double>(remaining) + 0.5));
    CHECK(p.known_unknown.size() == expect_ku);
  }
}

TEST_CASE("partition json round-trip") {
  std::vector<int> ten;
  for (int i = 0; i < 10; ++i) ten.push_back(i);
  const ClassPartition p = make_partition(ten, 6, 0.5, 11);

  TempDir tmp("partition");
  p.save(tmp.path / "partition.json");
  const ClassPartition q = ClassPartition::load(tmp.path / "partition.json");
  CHECK(p.known == q.known);
  CHECK(p.known_unknown == q.known_unknown);
  CHECK(p.unknown_unknown == q.unknown_unknown);
  CHECK(p.seed == q.seed);
}

TEST_CASE("split_dataset counts, roles and conservation") {
  const Dataset train = generate_synthetic(8, 20, 4, 6.0, 101);
  const Dataset test = generate_synthetic(8, 7, 4, 6.0, 202);
  const ClassPartition p = make_partition(train.distinct_labels(), 4, 0.5, 5);

  const SplitResult s = split_dataset(train, test, p);

  // Per-class counts by enumeration of the generated source.
  std::map<int, int> train_counts;
  for (const LabeledSample& x : train.samples) train_counts[x.class_label]++;
  std::size_t expect_kk = 0, expect_ku = 0;
  for (int c : p.known) expect_kk += train_counts[c];
  for (int c : p.known_unknown) expect_ku += train_counts[c];
  CHECK(s.train_kk.size() == expect_kk);
  CHECK(s.train_ku.size() == expect_ku);

  for (const LabeledSample& x : s.train_kk.samples) {
    CHECK(x.role == Role::KK);
    CHECK(p.is_known(x.class_label));
  }
  for (const LabeledSample& x : s.train_ku.samples) {
    CHECK(x.role == Role::KU);
    CHECK(p.is_known_unknown(x.class_label));
  }

  // Every test sample appears exactly once; KU classes count as unknowns.
  CHECK(s.test.size() == test.size());
  std::size_t kk_roles = 0, uu_roles = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(s.test.samples[i].class_label == test.samples[i].class_label);
    CHECK(s.test.samples[i].features == test.samples[i].features);
    if (s.test.samples[i].role == Role::KK)
      ++kk_roles;
    else {
      CHECK(s.test.samples[i].role == Role::UU);
      ++uu_roles;
    }
  }
  CHECK(kk_roles == 4 * 7);
  CHECK(uu_roles == 4 * 7);  // 2 KU + 2 UU classes, all unknown at test time

  // Zero-KU partition: train_ku comes back empty.
  const ClassPartition p0 = make_partition(train.distinct_labels(), 4, 0.0, 5);
  const SplitResult s0 = split_dataset(train, test, p0);
  CHECK(s0.train_ku.size() == 0);
}

TEST_CASE("split_dataset missing-class error") {
  const Dataset train = generate_synthetic(6, 5, 3, 6.0, 1);
  const Dataset test = generate_synthetic(6, 5, 3, 6.0, 2);

  ClassPartition p = make_partition(train.distinct_labels(), 3, 0.5, 0);
  p.unknown_unknown.push_back(99);  // class absent from both sources
  std::sort(p.unknown_unknown.begin(), p.unknown_unknown.end());
  CHECK_THROWS_AS(split_dataset(train, test, p), DataError);

  // A source class not listed in the partition is also rejected.
  const ClassPartition q = make_partition({1, 2, 3, 4, 5}, 3, 0.5, 0);
  CHECK_THROWS_AS(split_dataset(train, test, q), DataError);
}

TEST_CASE("generate_synthetic determinism and separation") {
  const Dataset a = generate_synthetic(8, 50, 10, 10.0, 7);
  const Dataset b = generate_synthetic(8, 50, 10, 10.0, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].class_label == b.samples[i].class_label);
    CHECK(a.samples[i].features == b.samples[i].features);  // bitwise
  }

  // Empirical class means stay pairwise far apart (population means are
  // lattice points with spacing 10).
  std::map<int, std::pair<Vector, int>> acc;
  for (const LabeledSample& s : a.samples) {
    auto& [sum, count] = acc.try_emplace(s.class_label, Vector::Zero(10), 0)
                             .first->second;
    for (int d = 0; d < 10; ++d) sum(d) += s.features[static_cast<std::size_t>(d)];
    ++count;
  }
  std::vector<Vector> means;
  for (auto& [label, sc] : acc) means.push_back(sc.first / sc.second);
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t j = i + 1; j < means.size(); ++j)
      CHECK((means[i] - means[j]).norm() > 9.0);

  CHECK_THROWS_AS(generate_synthetic(4, 10, 1, 5.0, 0), ConfigError);
  CHECK_THROWS_AS(generate_synthetic(4, 10, 5, 0.0, 0), ConfigError);
}

TEST_CASE("generate_synthetic nearest-mean oracle") {
  const Dataset ds = generate_synthetic(8, 200, 10, 10.0, 3);

  std::map<int, std::pair<Vector, int>> acc;
  for (const LabeledSample& s : ds.samples) {
    auto& [sum, count] = acc.try_emplace(s.class_label, Vector::Zero(10), 0)
                             .first->second;
    for (int d = 0; d < 10; ++d) sum(d) += s.features[static_cast<std::size_t>(d)];
    ++count;
  }
  std::map<int, Vector> means;
  for (auto& [label, sc] : acc) means[label] = sc.first / sc.second;

  std::size_t correct = 0;
  for (const LabeledSample& s : ds.samples) {
    int best_label = -1;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [label, mu] : means) {
      double d = 0;
      for (int k = 0; k < 10; ++k) {
        const double diff = s.features[static_cast<std::size_t>(k)] - mu(k);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_label = label;
      }
    }
    if (best_label == s.class_label) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(ds.size()) > 0.999);
}

TEST_CASE("dataset container round-trip is exact") {
  Dataset ds = generate_synthetic(5, 12, 6, 4.0, 99);
  ds.samples[3].role = Role::KU;  // exercise role persistence
  ds.samples[7].role = Role::UU;

  TempDir tmp("roundtrip");
  const auto path = tmp.path / "ds.tns";
  save_dataset(ds, path);
  const Dataset back = load_dataset(path, "container");

  REQUIRE(back.size() == ds.size());
  CHECK(back.class_count == ds.class_count);
  CHECK(back.feature_shape == ds.feature_shape);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.samples[i].class_label == ds.samples[i].class_label);
    CHECK(back.samples[i].role == ds.samples[i].role);
    CHECK(back.samples[i].features == ds.samples[i].features);  // bitwise
  }
}

TEST_CASE("tensor container rejects truncation and garbage") {
  TempDir tmp("container");
  const auto path = tmp.path / "x.tns";
  std::vector<TensorEntry> entries;
  entries.push_back({"v", {4}, std::vector<double>{1, 2, 3, 4}});
  write_tensor_container(path, entries);

  // Truncate the payload.
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 8);
  CHECK_THROWS_AS(read_tensor_container(path), FormatError);

  std::ofstream(tmp.path / "junk.tns") << "not a container at all";
  CHECK_THROWS_AS(read_tensor_container(tmp.path / "junk.tns"), FormatError);
  CHECK_THROWS_AS(read_tensor_container(tmp.path / "absent.tns"), IoError);
}

namespace {

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_fake_idx(const std::filesystem::path& dir, int count, int rows,
                    int cols, bool truncate_images) {
  std::ofstream img(dir / "t10k-images-idx3-ubyte", std::ios::binary);
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(count));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  const int pixels = count * rows * cols - (truncate_images ? 3 : 0);
  for (int i = 0; i < pixels; ++i)
    img.put(static_cast<char>((i * 37) % 256));
  img.close();

  std::ofstream lbl(dir / "t10k-labels-idx1-ubyte", std::ios::binary);
  write_be32(lbl, 0x00000801);
  write_be32(lbl, static_cast<std::uint32_t>(count));
  for (int i = 0; i < count; ++i) lbl.put(static_cast<char>(i % 3));
}

}  // namespace

TEST_CASE("idx loader parses, normalizes and validates") {
  TempDir tmp("idx");
  write_fake_idx(tmp.path, 5, 4, 4, false);

  const Dataset ds =
      load_dataset(tmp.path / "t10k-images-idx3-ubyte", "idx");
  REQUIRE(ds.size() == 5);
  CHECK(ds.feature_shape == std::vector<std::size_t>{1, 4, 4});
  CHECK(ds.class_count == 3);
  CHECK(ds.samples[0].class_label == 0);
  CHECK(ds.samples[4].class_label == 1);

  // First pixel byte is 0: (0/255 - 0.1307) / 0.3081.
  CHECK(ds.samples[0].features[0] ==
        doctest::Approx((0.0 - 0.1307) / 0.3081).epsilon(1e-12));
  // Second pixel byte is 37.
  CHECK(ds.samples[0].features[1] ==
        doctest::Approx((37.0 / 255.0 - 0.1307) / 0.3081).epsilon(1e-12));

  SUBCASE("truncated image payload is a format error") {
    TempDir tmp2("idx_trunc");
    write_fake_idx(tmp2.path, 5, 4, 4, true);
    CHECK_THROWS_AS(
        load_dataset(tmp2.path / "t10k-images-idx3-ubyte", "idx"),
        FormatError);
  }
  SUBCASE("bad magic is a format error") {
    std::ofstream img(tmp.path / "bad-images-idx3-ubyte", std::ios::binary);
    write_be32(img, 0xdeadbeef);
    img.close();
    CHECK_THROWS_AS(load_idx(tmp.path / "bad-images-idx3-ubyte",
                             tmp.path / "t10k-labels-idx1-ubyte"),
                    FormatError);
  }
  SUBCASE("count mismatch is a format error") {
    std::ofstream lbl(tmp.path / "short-labels-idx1-ubyte", std::ios::binary);
    write_be32(lbl, 0x00000801);
    write_be32(lbl, 3);
    for (int i = 0; i < 3; ++i) lbl.put(0);
    lbl.close();
    CHECK_THROWS_AS(load_idx(tmp.path / "t10k-images-idx3-ubyte",
                             tmp.path / "short-labels-idx1-ubyte"),
                    FormatError);
  }
  SUBCASE("unknown format name is rejected") {
    CHECK_THROWS_AS(load_dataset(tmp.path / "t10k-images-idx3-ubyte", "csv"),
                    ConfigError);
  }
}
