#include "vibrosense/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vibrosense/io.hpp"
#include "vibrosense/parallel.hpp"
#include "vibrosense/spectral.hpp"

namespace vibro {

namespace {

bool is_standard_level(double l) {
  for (double s : standard_levels())
    if (std::abs(l - s) < 1e-9) return true;
  return false;
}

bool is_intermediate_level(double l) {
  for (double s : intermediate_levels())
    if (std::abs(l - s) < 1e-9) return true;
  return false;
}

}  // namespace

const CategorySplit& DatasetSplits::category(char c) const {
  for (const auto& cs : categories)
    if (cs.category == c) return cs;
  throw std::invalid_argument("no such category");
}

DatasetSplits split_dataset(const std::vector<ManifestRow>& manifest) {
  if (manifest.empty()) throw std::invalid_argument("empty manifest");

  // training-pool strata: seen instances, on-grid levels, chirp/song
  int max_pool_speaker = -1, max_instance = -1;
  for (const auto& r : manifest) {
    max_instance = std::max(max_instance, r.instance);
    if (r.excitation != "ambient_surrogate" && is_standard_level(r.level))
      max_pool_speaker = std::max(max_pool_speaker, r.speaker);
  }
  // the unseen instance only exists if some instance appears solely outside
  // the chirp/song on-grid pool... in practice it is the largest id, present
  // only in the held-out strata
  std::set<int> pool_instances;
  for (const auto& r : manifest)
    if (r.excitation != "ambient_surrogate" && is_standard_level(r.level))
      pool_instances.insert(r.instance);
  int unseen = -1;
  if (pool_instances.size() > 1) unseen = *pool_instances.rbegin();

  DatasetSplits out;
  out.held_out_speaker = max_pool_speaker;
  out.unseen_instance = unseen;
  for (std::size_t i = 0; i < 6; ++i)
    out.categories[i].category = char('a' + i);

  auto& cat = out.categories;
  for (const auto& r : manifest) {
    const bool ambient = r.excitation == "ambient_surrogate";
    const bool interm = is_intermediate_level(r.level);
    const bool on_grid = is_standard_level(r.level);
    const bool unseen_inst = unseen >= 0 && r.instance == unseen;
    const bool pool = !ambient && on_grid && !unseen_inst;

    if (pool && r.speaker != max_pool_speaker) out.train.push_back(r);
    if (pool && r.speaker == max_pool_speaker) cat[0].test.push_back(r);
    if (!ambient && on_grid && unseen_inst) cat[1].test.push_back(r);
    if (!ambient && interm) cat[2].test.push_back(r);
    if (ambient && on_grid && !unseen_inst) cat[3].test.push_back(r);
    if (ambient && interm) cat[4].test.push_back(r);
    if (ambient && on_grid && unseen_inst) cat[5].test.push_back(r);
  }
  for (auto& cs : out.categories) cs.available = !cs.test.empty();

  // disjointness by construction; verify anyway
  std::set<int> train_ids;
  for (const auto& r : out.train) train_ids.insert(r.sample_id);
  for (const auto& cs : out.categories)
    for (const auto& r : cs.test)
      if (train_ids.count(r.sample_id))
        throw std::logic_error("split leak: sample in both train and test");
  return out;
}

std::uint64_t manifest_hash(const std::vector<ManifestRow>& rows) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& r : rows) {
    const std::int64_t words[5] = {r.sample_id, r.class_id, r.instance,
                                   std::int64_t(r.level * 1e6), r.speaker};
    h = fnv1a(words, sizeof(words), h);
    h = fnv1a(r.excitation.data(), r.excitation.size(), h);
    h = fnv1a(&r.seed, sizeof(r.seed), h);
  }
  return h;
}

TrainSample featurize_row(const ManifestRow& row, const FrequencyGrid& grid) {
  const SynthSample sig = load_sample_signals(row);
  TrainSample s;
  s.class_id = row.class_id;
  s.instance = row.instance;
  s.level = row.level;
  s.excitation = row.excitation;
  s.speaker = row.speaker;
  for (const auto& v : sig.signals) s.raw.push_back(featurize(v, grid));
  return s;
}

namespace {

struct CategoryMetrics {
  double mae = 0.0;
  double acc = 0.0;
};

CategoryMetrics eval_category(const TransformerParams& params,
                              const std::vector<ManifestRow>& rows,
                              const SampleLoader& loader, bool use_expectation,
                              int max_points, unsigned n_threads) {
  std::vector<double> errs(rows.size(), 0.0);
  std::vector<int> hits(rows.size(), 0);
  parallel_for(
      rows.size(),
      [&](std::size_t i) {
        TrainSample s = loader(rows[i]);
        if (max_points > 0 && int(s.raw.size()) > max_points)
          s.raw.resize(std::size_t(max_points));
        const TrainExample ex = make_example(s);
        const PredictionResult pr = forward(ex.features, params);
        const double l_hat = use_expectation ? pr.l_exp : pr.l_map;
        errs[i] = std::abs(l_hat - s.level);
        Eigen::Index amax = 0;
        pr.class_logits.maxCoeff(&amax);
        hits[i] = int(amax) == s.class_id ? 1 : 0;
      },
      n_threads);
  CategoryMetrics m;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.mae += errs[i];
    m.acc += hits[i];
  }
  m.mae /= double(rows.size());
  m.acc /= double(rows.size());
  return m;
}

}  // namespace

EvalReport evaluate(const TransformerParams& params,
                    const DatasetSplits& splits, const SampleLoader& loader,
                    unsigned n_threads) {
  EvalReport rep;
  rep.checkpoint_hash = params.content_hash();
  std::vector<ManifestRow> all = splits.train;
  for (const auto& cs : splits.categories)
    all.insert(all.end(), cs.test.begin(), cs.test.end());
  rep.dataset_hash = manifest_hash(all);
  rep.notes =
      "category d/e/f excitation is a pink-noise ambient surrogate, not a "
      "supermarket recording";

  for (const auto& cs : splits.categories) {
    EvalRow row;
    row.category = cs.category;
    row.available = cs.available;
    row.n_samples = int(cs.test.size());
    if (cs.available) {
      const bool use_exp = cs.category == 'c' || cs.category == 'e';
      const CategoryMetrics m = eval_category(
          params, cs.test, loader, use_exp, params.config.n_points, n_threads);
      row.level_mae = m.mae;
      row.class_accuracy = m.acc;
    }
    rep.rows.push_back(row);
  }
  return rep;
}

double AblationReport::mae_for(int n_points, char category) const {
  for (const auto& r : rows)
    if (r.n_points == n_points && r.category == category) return r.level_mae;
  throw std::invalid_argument("no such ablation row");
}

AblationReport ablate_points(const std::vector<TrainSample>& train_samples,
                             const DatasetSplits& splits,
                             const SampleLoader& loader,
                             const ModelConfig& model_config,
                             const TrainConfig& train_config,
                             const FrequencyGrid& grid) {
  AblationReport rep;
  for (int n_points : {1, 3}) {
    ModelConfig cfg = model_config;
    cfg.n_points = n_points;
    std::vector<TrainSample> variant = train_samples;
    if (n_points < int(train_samples.front().raw.size()))
      for (auto& s : variant) s.raw.resize(std::size_t(n_points));
    const TrainResult tr = train(variant, cfg, train_config, grid);
    for (char category : {'a', 'b'}) {
      const CategorySplit& cs = splits.category(category);
      if (!cs.available) continue;
      AblationRow row;
      row.n_points = n_points;
      row.category = category;
      row.n_samples = int(cs.test.size());
      row.level_mae = eval_category(tr.params, cs.test, loader, false,
                                    n_points, train_config.n_threads)
                          .mae;
      rep.rows.push_back(row);
    }
  }
  return rep;
}

LatentProjection latent_pca(const TransformerParams& params,
                            const std::vector<TrainSample>& samples) {
  if (samples.size() < 4)
    throw std::invalid_argument("need at least 4 samples for PCA");
  const int d = params.config.d_model;
  Eigen::MatrixXd embeds(d, Eigen::Index(samples.size()));
  LatentProjection proj;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const TrainExample ex = make_example(samples[i]);
    embeds.col(Eigen::Index(i)) = forward(ex.features, params).cls_embedding;
    proj.levels.push_back(samples[i].level);
    proj.classes.push_back(samples[i].class_id);
  }
  const Eigen::VectorXd mean = embeds.rowwise().mean();
  embeds.colwise() -= mean;
  const Eigen::MatrixXd cov =
      embeds * embeds.transpose() / double(samples.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");
  // eigenvalues ascending: take the last three, largest first
  proj.components.resize(d, 3);
  const double total = std::max(es.eigenvalues().sum(), 1e-300);
  for (int k = 0; k < 3; ++k) {
    proj.components.col(k) = es.eigenvectors().col(d - 1 - k);
    proj.explained_variance_ratio(k) =
        std::max(0.0, es.eigenvalues()(d - 1 - k)) / total;
  }
  proj.points = (proj.components.transpose() * embeds).transpose();
  return proj;
}

double silhouette_by_level(const LatentProjection& proj) {
  // clusters = the on-grid levels present
  std::vector<int> label(proj.levels.size(), -1);
  std::vector<double> keys;
  for (std::size_t i = 0; i < proj.levels.size(); ++i) {
    if (!is_standard_level(proj.levels[i])) continue;
    std::size_t k = 0;
    for (; k < keys.size(); ++k)
      if (std::abs(keys[k] - proj.levels[i]) < 1e-9) break;
    if (k == keys.size()) keys.push_back(proj.levels[i]);
    label[i] = int(k);
  }
  if (keys.size() < 2)
    throw std::invalid_argument("silhouette needs at least two level groups");

  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] < 0) continue;
    std::vector<double> mean_dist(keys.size(), 0.0);
    std::vector<int> count(keys.size(), 0);
    for (std::size_t j = 0; j < label.size(); ++j) {
      if (label[j] < 0 || j == i) continue;
      mean_dist[std::size_t(label[j])] +=
          (proj.points.row(Eigen::Index(i)) - proj.points.row(Eigen::Index(j)))
              .norm();
      ++count[std::size_t(label[j])];
    }
    const int own = label[i];
    if (count[std::size_t(own)] == 0) continue;  // singleton cluster
    const double a = mean_dist[std::size_t(own)] / count[std::size_t(own)];
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < keys.size(); ++k)
      if (int(k) != own && count[k] > 0)
        b = std::min(b, mean_dist[k] / count[k]);
    total += (b - a) / std::max(a, b);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("no scorable points");
  return total / double(counted);
}

namespace {

double point_segment_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& a,
                              const Eigen::Vector3d& b) {
  const Eigen::Vector3d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 <= 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

}  // namespace

double intermediate_between_fraction(const LatentProjection& proj) {
  const auto& L = standard_levels();
  // centroids of the on-grid level groups
  std::vector<Eigen::Vector3d> centroid(L.size(), Eigen::Vector3d::Zero());
  std::vector<int> count(L.size(), 0);
  for (std::size_t i = 0; i < proj.levels.size(); ++i)
    for (std::size_t k = 0; k < L.size(); ++k)
      if (std::abs(proj.levels[i] - L[k]) < 1e-9) {
        centroid[k] += proj.points.row(Eigen::Index(i)).transpose();
        ++count[k];
      }
  for (std::size_t k = 0; k < L.size(); ++k) {
    if (count[k] == 0)
      throw std::invalid_argument("missing on-grid level group for centroids");
    centroid[k] /= double(count[k]);
  }

  int between = 0, total = 0;
  for (std::size_t i = 0; i < proj.levels.size(); ++i) {
    if (!is_intermediate_level(proj.levels[i])) continue;
    std::size_t lo = 0;
    while (lo + 1 < L.size() && L[lo + 1] < proj.levels[i]) ++lo;
    const Eigen::Vector3d p = proj.points.row(Eigen::Index(i)).transpose();
    const double own = point_segment_distance(p, centroid[lo], centroid[lo + 1]);
    bool closest = true;
    for (std::size_t a = 0; a < L.size() && closest; ++a)
      for (std::size_t b = a + 1; b < L.size(); ++b) {
        if (a == lo && b == lo + 1) continue;
        if (point_segment_distance(p, centroid[a], centroid[b]) < own) {
          closest = false;
          break;
        }
      }
    between += closest ? 1 : 0;
    ++total;
  }
  if (total == 0)
    throw std::invalid_argument("no intermediate-level samples in projection");
  return double(between) / double(total);
}

void save_eval_report(const EvalReport& report, const std::string& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write " + csv_path);
  out << std::setprecision(17);
  out << "# checkpoint_hash=" << report.checkpoint_hash
      << " dataset_hash=" << report.dataset_hash << "\n";
  out << "# notes=" << report.notes << "\n";
  out << "category,available,n_samples,level_mae,class_accuracy\n";
  for (const auto& r : report.rows)
    out << r.category << ',' << (r.available ? 1 : 0) << ',' << r.n_samples
        << ',' << r.level_mae << ',' << r.class_accuracy << '\n';
}

EvalReport load_eval_report(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot read " + csv_path);
  EvalReport rep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# checkpoint_hash=", 0) == 0) {
      std::istringstream ss(line.substr(18));
      ss >> rep.checkpoint_hash;
      std::string tail;
      ss >> tail;
      if (tail.rfind("dataset_hash=", 0) == 0)
        rep.dataset_hash = std::stoull(tail.substr(13));
      continue;
    }
    if (line.rfind("# notes=", 0) == 0) {
      rep.notes = line.substr(8);
      continue;
    }
    if (line.empty() || line[0] == '#' || line.rfind("category", 0) == 0)
      continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 5) throw std::runtime_error("malformed report row");
    EvalRow r;
    r.category = fields[0].at(0);
    r.available = fields[1] == "1";
    r.n_samples = std::stoi(fields[2]);
    r.level_mae = std::stod(fields[3]);
    r.class_accuracy = std::stod(fields[4]);
    rep.rows.push_back(r);
  }
  return rep;
}

std::string format_report_table(const EvalReport& report) {
  std::ostringstream out;
  out << "category   n      level MAE   class acc\n";
  for (const auto& r : report.rows) {
    out << "   " << r.category << "     ";
    if (!r.available) {
      out << "  --    unavailable\n";
      continue;
    }
    out << std::setw(5) << r.n_samples << "   " << std::fixed
        << std::setprecision(4) << std::setw(9) << r.level_mae << "   "
        << std::setw(9) << r.class_accuracy << "\n";
  }
  out << "checkpoint " << std::hex << report.checkpoint_hash << "  dataset "
      << report.dataset_hash << std::dec << "\n";
  if (!report.notes.empty()) out << "note: " << report.notes << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// svg plotting

namespace {

struct SvgCanvas {
  std::ostringstream body;
  double w, h;
  SvgCanvas(double width, double height) : w(width), h(height) {}

  void line(double x1, double y1, double x2, double y2, const char* color,
            double sw = 1.0) {
    body << "<line x1=\"" << x1 << "\" y1=\"" << y1 << "\" x2=\"" << x2
         << "\" y2=\"" << y2 << "\" stroke=\"" << color << "\" stroke-width=\""
         << sw << "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& color) {
    body << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r
         << "\" fill=\"" << color << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts,
                const char* color) {
    body << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const auto& [x, y] : pts) body << x << ',' << y << ' ';
    body << "\"/>\n";
  }
  void text(double x, double y, const std::string& s) {
    body << "<text x=\"" << x << "\" y=\"" << y
         << "\" font-size=\"11\" font-family=\"sans-serif\">" << s
         << "</text>\n";
  }
  void save(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
        << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << ' ' << h
        << "\">\n<rect width=\"" << w << "\" height=\"" << h
        << "\" fill=\"white\"/>\n"
        << body.str() << "</svg>\n";
  }
};

std::string level_color(double level) {
  // blue (empty) to red (full)
  const int r = int(std::clamp(level, 0.0, 1.0) * 255.0);
  const int b = 255 - r;
  std::ostringstream ss;
  ss << "rgb(" << r << ",60," << b << ")";
  return ss.str();
}

}  // namespace

void svg_training_curves(const std::vector<EpochLog>& log,
                         const std::string& path) {
  if (log.empty()) throw std::invalid_argument("empty training log");
  SvgCanvas svg(640, 360);
  const double ml = 50, mr = 15, mt = 15, mb = 35;
  const double pw = svg.w - ml - mr, ph = svg.h - mt - mb;
  double max_loss = 1e-12, max_mae = 1e-12;
  for (const auto& r : log) {
    max_loss = std::max(max_loss, r.train_loss);
    max_mae = std::max(max_mae, r.val_mae);
  }
  auto px = [&](double e) {
    return ml + pw * e / double(std::max<std::size_t>(1, log.size() - 1));
  };
  svg.line(ml, mt, ml, mt + ph, "black");
  svg.line(ml, mt + ph, ml + pw, mt + ph, "black");
  std::vector<std::pair<double, double>> loss_pts, mae_pts;
  for (std::size_t i = 0; i < log.size(); ++i) {
    loss_pts.push_back(
        {px(double(i)), mt + ph * (1.0 - log[i].train_loss / max_loss)});
    mae_pts.push_back(
        {px(double(i)), mt + ph * (1.0 - log[i].val_mae / max_mae)});
  }
  svg.polyline(loss_pts, "steelblue");
  svg.polyline(mae_pts, "firebrick");
  svg.text(ml, svg.h - 10, "epoch");
  svg.text(ml + 10, mt + 12, "train loss (blue), val MAE (red), each to own max");
  svg.save(path);
}

void svg_pca_scatter(const LatentProjection& proj, const std::string& path) {
  SvgCanvas svg(520, 520);
  const double m = 40;
  double lo_x = proj.points.col(0).minCoeff(), hi_x = proj.points.col(0).maxCoeff();
  double lo_y = proj.points.col(1).minCoeff(), hi_y = proj.points.col(1).maxCoeff();
  const double sx = hi_x > lo_x ? (svg.w - 2 * m) / (hi_x - lo_x) : 1.0;
  const double sy = hi_y > lo_y ? (svg.h - 2 * m) / (hi_y - lo_y) : 1.0;
  for (Eigen::Index i = 0; i < proj.points.rows(); ++i)
    svg.circle(m + (proj.points(i, 0) - lo_x) * sx,
               svg.h - m - (proj.points(i, 1) - lo_y) * sy, 2.5,
               level_color(proj.levels[std::size_t(i)]));
  svg.text(10, 20, "CLS-token PCA (pc1 vs pc2), color = fill level");
  svg.save(path);
}

void svg_spectrum(const SpectralFeature& s, const FrequencyGrid& grid,
                  const std::string& path) {
  SvgCanvas svg(720, 300);
  const double m = 40;
  const double hi = std::max(1e-12, s.magnitudes.maxCoeff());
  const double lo_f = grid.frequencies(0);
  const double hi_f = grid.frequencies(grid.frequencies.size() - 1);
  const char* colors[2] = {"steelblue", "darkorange"};
  for (int axis = 0; axis < 2; ++axis) {
    std::vector<std::pair<double, double>> pts;
    for (Eigen::Index k = 0; k < grid.frequencies.size(); ++k)
      pts.push_back(
          {m + (svg.w - 2 * m) * (grid.frequencies(k) - lo_f) / (hi_f - lo_f),
           svg.h - m - (svg.h - 2 * m) * s.magnitudes(axis, k) / hi});
    svg.polyline(pts, colors[axis]);
  }
  svg.text(10, 20, "magnitude spectrum, x (blue) and y (orange)");
  svg.save(path);
}

}  // namespace vibro
