#include "casdc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "casdc/container.hpp"
#include "casdc/errors.hpp"
#include "casdc/rng.hpp"

namespace casdc {

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

}  // namespace

const char* role_name(Role r) {
  switch (r) {
    case Role::KK:
      return "KK";
    case Role::KU:
      return "KU";
    case Role::UU:
      return "UU";
  }
  return "?";
}

bool ClassPartition::is_known(int class_id) const {
  return std::binary_search(known.begin(), known.end(), class_id);
}

bool ClassPartition::is_known_unknown(int class_id) const {
  return std::binary_search(known_unknown.begin(), known_unknown.end(),
                            class_id);
}

Role ClassPartition::role_of(int class_id) const {
  if (is_known(class_id)) return Role::KK;
  if (is_known_unknown(class_id)) return Role::KU;
  if (std::binary_search(unknown_unknown.begin(), unknown_unknown.end(),
                         class_id))
    return Role::UU;
  throw DataError("class " + std::to_string(class_id) +
                  " is not listed in the partition");
}

nlohmann::json ClassPartition::to_json() const {
  nlohmann::json j{{"known", known},
                   {"known_unknown", known_unknown},
                   {"unknown_unknown", unknown_unknown},
                   {"seed", seed}};
  if (!note.empty()) j["note"] = note;
  return j;
}

ClassPartition ClassPartition::from_json(const nlohmann::json& j) {
  ClassPartition p;
  p.known = j.at("known").get<std::vector<int>>();
  p.known_unknown = j.at("known_unknown").get<std::vector<int>>();
  p.unknown_unknown = j.at("unknown_unknown").get<std::vector<int>>();
  p.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("note")) p.note = j.at("note").get<std::string>();
  std::sort(p.known.begin(), p.known.end());
  std::sort(p.known_unknown.begin(), p.known_unknown.end());
  std::sort(p.unknown_unknown.begin(), p.unknown_unknown.end());
  return p;
}

void ClassPartition::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << to_json().dump(2) << "\n";
}

ClassPartition ClassPartition::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("partition file " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::size_t Dataset::feature_size() const {
  std::size_t n = 1;
  for (std::size_t d : feature_shape) n *= d;
  return n;
}

std::vector<int> Dataset::distinct_labels() const {
  std::set<int> s;
  for (const LabeledSample& x : samples) s.insert(x.class_label);
  return {s.begin(), s.end()};
}

Matrix Dataset::feature_matrix() const {
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return feature_matrix(idx);
}

Matrix Dataset::feature_matrix(const std::vector<std::size_t>& indices) const {
  const std::size_t d = feature_size();
  Matrix m(static_cast<Eigen::Index>(indices.size()),
           static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const LabeledSample& s = samples.at(indices[r]);
    if (s.features.size() != d)
      throw ShapeError("sample feature size does not match dataset shape");
    for (std::size_t c = 0; c < d; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          s.features[c];
  }
  return m;
}

std::vector<Role> Dataset::roles() const {
  std::vector<Role> r(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) r[i] = samples[i].role;
  return r;
}

ClassPartition make_partition(const std::vector<int>& all_classes, int n_known,
                              double ku_fraction, std::uint64_t seed) {
  if (all_classes.empty()) throw DataError("make_partition: empty class list");
  std::vector<int> classes(all_classes);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  const int total = static_cast<int>(classes.size());
  if (n_known <= 0)
    throw DataError("make_partition: n_known must be positive");
  if (n_known >= total)
    throw DataError("invalid partition: n_known (" + std::to_string(n_known) +
                    ") must be smaller than the class count (" +
                    std::to_string(total) + ")");
  if (ku_fraction < 0.0 || ku_fraction > 1.0)
    throw DataError("make_partition: ku_fraction must lie in [0, 1]");

  Rng rng(seed);
  rng.shuffle(classes);

  ClassPartition p;
  p.seed = seed;
  p.known.assign(classes.begin(), classes.begin() + n_known);

  const int remaining = total - n_known;
  // Round half up, so sweep grids over ku_fraction are deterministic.
  const int n_ku = static_cast<int>(
      std::floor(ku_fraction * static_cast<double>(remaining) + 0.5));
  p.known_unknown.assign(classes.begin() + n_known,
                         classes.begin() + n_known + n_ku);
  p.unknown_unknown.assign(classes.begin() + n_known + n_ku, classes.end());
  if (n_ku == 0 && ku_fraction > 0.0)
    p.note = "ku_fraction " + std::to_string(ku_fraction) + " of " +
             std::to_string(remaining) + " non-known classes rounded to zero";

  std::sort(p.known.begin(), p.known.end());
  std::sort(p.known_unknown.begin(), p.known_unknown.end());
  std::sort(p.unknown_unknown.begin(), p.unknown_unknown.end());
  return p;
}

SplitResult split_dataset(const Dataset& train_source,
                          const Dataset& test_source,
                          const ClassPartition& partition) {
  if (train_source.feature_shape != test_source.feature_shape)
    throw ShapeError("split_dataset: train and test feature shapes differ");

  auto check_presence = [&](const Dataset& src, const char* which) {
    const std::vector<int> present = src.distinct_labels();
    std::vector<int> missing;
    auto scan = [&](const std::vector<int>& classes) {
      for (int c : classes)
        if (!std::binary_search(present.begin(), present.end(), c))
          missing.push_back(c);
    };
    scan(partition.known);
    scan(partition.known_unknown);
    scan(partition.unknown_unknown);
    if (!missing.empty())
      throw DataError(std::string("missing-class: classes [") +
                      join_ints(missing) + "] absent from the " + which +
                      " source");
    for (int c : present) partition.role_of(c);  // unlisted class -> throws
  };
  check_presence(train_source, "train");
  check_presence(test_source, "test");

  SplitResult out;
  out.train_kk.feature_shape = train_source.feature_shape;
  out.train_ku.feature_shape = train_source.feature_shape;
  out.test.feature_shape = test_source.feature_shape;

  for (const LabeledSample& s : train_source.samples) {
    switch (partition.role_of(s.class_label)) {
      case Role::KK: {
        LabeledSample copy = s;
        copy.role = Role::KK;
        out.train_kk.samples.push_back(std::move(copy));
        break;
      }
      case Role::KU: {
        LabeledSample copy = s;
        copy.role = Role::KU;
        out.train_ku.samples.push_back(std::move(copy));
        break;
      }
      case Role::UU:
        break;  // unknown unknowns are never seen during training
    }
  }
  for (const LabeledSample& s : test_source.samples) {
    LabeledSample copy = s;
    // Known-unknown classes count as unknowns at inference time.
    copy.role =
        partition.is_known(s.class_label) ? Role::KK : Role::UU;
    out.test.samples.push_back(std::move(copy));
  }

  out.train_kk.class_count = static_cast<int>(partition.known.size());
  out.train_ku.class_count = static_cast<int>(partition.known_unknown.size());
  out.test.class_count = static_cast<int>(partition.known.size() +
                                          partition.known_unknown.size() +
                                          partition.unknown_unknown.size());
  return out;
}

Dataset generate_synthetic(int n_classes, int samples_per_class, int dim,
                           double class_separation, std::uint64_t seed) {
  if (dim < 2) throw ConfigError("generate_synthetic: dim must be >= 2");
  if (class_separation <= 0.0)
    throw ConfigError("generate_synthetic: class_separation must be positive");
  if (n_classes <= 0 || samples_per_class <= 0)
    throw ConfigError("generate_synthetic: counts must be positive");

  // Mean placement. When the classes fit the dimensionality, each mean sits
  // on its own axis at class_separation / sqrt(2), making all pairwise
  // distances exactly class_separation. Otherwise means fall back to a
  // lattice with spacing class_separation (row-major enumeration), where
  // any two means differ by at least one lattice step.
  std::vector<std::vector<double>> means;
  means.reserve(static_cast<std::size_t>(n_classes));
  if (n_classes <= dim) {
    const double scale = class_separation / std::sqrt(2.0);
    for (int c = 0; c < n_classes; ++c) {
      std::vector<double> mu(static_cast<std::size_t>(dim), 0.0);
      mu[static_cast<std::size_t>(c)] = scale;
      means.push_back(std::move(mu));
    }
  } else {
    int k = 1;
    while (std::pow(static_cast<double>(k), dim) <
           static_cast<double>(n_classes))
      ++k;
    std::vector<int> coord(static_cast<std::size_t>(dim), 0);
    for (int c = 0; c < n_classes; ++c) {
      std::vector<double> mu(static_cast<std::size_t>(dim));
      for (int d = 0; d < dim; ++d)
        mu[static_cast<std::size_t>(d)] =
            class_separation * coord[static_cast<std::size_t>(d)];
      means.push_back(std::move(mu));
      for (int d = dim - 1; d >= 0; --d) {
        if (++coord[static_cast<std::size_t>(d)] < k) break;
        coord[static_cast<std::size_t>(d)] = 0;
      }
    }
  }

  Dataset ds;
  ds.class_count = n_classes;
  ds.feature_shape = {static_cast<std::size_t>(dim)};
  ds.samples.reserve(static_cast<std::size_t>(n_classes) *
                     static_cast<std::size_t>(samples_per_class));

  Rng rng(seed);
  for (int c = 0; c < n_classes; ++c) {
    for (int i = 0; i < samples_per_class; ++i) {
      LabeledSample s;
      s.class_label = c + 1;  // labels are 1-indexed
      s.role = Role::KK;
      s.features.resize(static_cast<std::size_t>(dim));
      for (int d = 0; d < dim; ++d)
        s.features[static_cast<std::size_t>(d)] =
            means[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] +
            rng.gaussian();
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

namespace {

std::uint32_t read_be32(std::ifstream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("idx: truncated " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path,
                 const IdxNormalization& norm) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open: " + images_path.string());
  std::ifstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw IoError("cannot open: " + labels_path.string());

  const std::uint32_t img_magic = read_be32(img, "image magic");
  if (img_magic != 0x00000803)
    throw FormatError("idx: bad image magic in " + images_path.string());
  const std::uint32_t count = read_be32(img, "image count");
  const std::uint32_t rows = read_be32(img, "image rows");
  const std::uint32_t cols = read_be32(img, "image cols");

  const std::uint32_t lbl_magic = read_be32(lbl, "label magic");
  if (lbl_magic != 0x00000801)
    throw FormatError("idx: bad label magic in " + labels_path.string());
  const std::uint32_t lbl_count = read_be32(lbl, "label count");
  if (lbl_count != count)
    throw FormatError("idx: image/label count mismatch (" +
                      std::to_string(count) + " vs " +
                      std::to_string(lbl_count) + ")");

  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  std::vector<std::uint8_t> img_bytes(static_cast<std::size_t>(count) *
                                      pixels);
  img.read(reinterpret_cast<char*>(img_bytes.data()),
           static_cast<std::streamsize>(img_bytes.size()));
  if (!img || img.gcount() !=
                  static_cast<std::streamsize>(img_bytes.size()))
    throw FormatError("idx: truncated image payload in " +
                      images_path.string());
  std::vector<std::uint8_t> lbl_bytes(count);
  lbl.read(reinterpret_cast<char*>(lbl_bytes.data()),
           static_cast<std::streamsize>(lbl_bytes.size()));
  if (!lbl || lbl.gcount() !=
                  static_cast<std::streamsize>(lbl_bytes.size()))
    throw FormatError("idx: truncated label payload in " +
                      labels_path.string());

  Dataset ds;
  ds.feature_shape = {1, rows, cols};
  std::set<int> labels_seen;
  ds.samples.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    LabeledSample& s = ds.samples[i];
    s.class_label = static_cast<int>(lbl_bytes[i]);
    s.role = Role::KK;
    s.features.resize(pixels);
    const std::uint8_t* src = img_bytes.data() + std::size_t(i) * pixels;
    for (std::size_t p = 0; p < pixels; ++p)
      s.features[p] =
          (static_cast<double>(src[p]) / 255.0 - norm.mean) / norm.stddev;
    labels_seen.insert(s.class_label);
  }
  ds.class_count = static_cast<int>(labels_seen.size());
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path,
                     const std::string& format, const IdxNormalization& norm) {
  if (format == "container") {
    const auto entries = read_tensor_container(path);
    const TensorEntry& feat = find_entry(entries, "features");
    const TensorEntry& labels = find_entry(entries, "labels");
    const TensorEntry& roles = find_entry(entries, "roles");
    const TensorEntry& cc = find_entry(entries, "class_count");
    if (feat.shape.empty()) throw FormatError("dataset container: rank-0 features");

    Dataset ds;
    const std::size_t n = feat.shape[0];
    ds.feature_shape.assign(feat.shape.begin() + 1, feat.shape.end());
    const std::size_t d = ds.feature_size();
    if (labels.i64().size() != n || roles.u8().size() != n)
      throw FormatError("dataset container: labels/roles length mismatch");
    ds.class_count = static_cast<int>(cc.i64().at(0));
    ds.samples.resize(n);
    const std::vector<double>& fv = feat.f64();
    for (std::size_t i = 0; i < n; ++i) {
      LabeledSample& s = ds.samples[i];
      s.class_label = static_cast<int>(labels.i64()[i]);
      if (roles.u8()[i] > 2)
        throw FormatError("dataset container: bad role byte");
      s.role = static_cast<Role>(roles.u8()[i]);
      s.features.assign(fv.begin() + static_cast<std::ptrdiff_t>(i * d),
                        fv.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    }
    return ds;
  }
  if (format == "idx") {
    std::string name = path.filename().string();
    auto replace = [&](const std::string& from, const std::string& to) {
      const auto pos = name.find(from);
      if (pos == std::string::npos) return false;
      name.replace(pos, from.size(), to);
      return true;
    };
    if (!replace("images", "labels"))
      throw IoError("idx: cannot derive labels path from " + path.string() +
                    " (filename does not contain 'images')");
    replace("idx3", "idx1");
    return load_idx(path, path.parent_path() / name, norm);
  }
  throw ConfigError("load_dataset: unknown format '" + format + "'");
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const std::size_t n = ds.size();
  const std::size_t d = ds.feature_size();
  std::vector<double> features(n * d);
  std::vector<std::int64_t> labels(n);
  std::vector<std::uint8_t> roles(n);
  for (std::size_t i = 0; i < n; ++i) {
    const LabeledSample& s = ds.samples[i];
    if (s.features.size() != d)
      throw ShapeError("save_dataset: sample feature size mismatch");
    std::copy(s.features.begin(), s.features.end(),
              features.begin() + static_cast<std::ptrdiff_t>(i * d));
    labels[i] = s.class_label;
    roles[i] = static_cast<std::uint8_t>(s.role);
  }

  std::vector<std::uint64_t> feat_shape{n};
  for (std::size_t dim : ds.feature_shape) feat_shape.push_back(dim);

  std::vector<TensorEntry> entries;
  entries.push_back({"features", feat_shape, std::move(features)});
  entries.push_back({"labels", {n}, std::move(labels)});
  entries.push_back({"roles", {n}, std::move(roles)});
  entries.push_back({"class_count",
                     {1},
                     std::vector<std::int64_t>{ds.class_count}});
  write_tensor_container(path, entries);
}

}  // namespace casdc
