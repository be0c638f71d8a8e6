// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include "invenc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "invenc/error.hpp"

namespace invenc::eval {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

void ensure_parent_writable(const fs::path& p) {
  const fs::path parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) throw RuntimeFailure("output directory does not exist: " + parent.string());
}

// Distinct colours for up to 10 labels, then a golden-angle hue walk (BGR).
cv::Scalar label_colour(std::int64_t label) {
  static const int kTab10[10][3] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                    {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
                                    {188, 189, 34},  {23, 190, 207}};
  if (label >= 0 && label < 10) return {double(kTab10[label][2]), double(kTab10[label][1]), double(kTab10[label][0])};
  cv::Mat hsv(1, 1, CV_8UC3, cv::Scalar(static_cast<double>((label * 137) % 180), 200, 220));
  cv::Mat bgr;
  cv::cvtColor(hsv, bgr, cv::COLOR_HSV2BGR);
  const auto px = bgr.at<cv::Vec3b>(0, 0);
  return {double(px[0]), double(px[1]), double(px[2])};
}

}  // namespace

void EmbeddingTable::validate() const {
  const auto m = rows();
  if (vectors.dim() != 2 || vectors.size(0) != m) throw InvalidArgument("embedding table: vectors must be M x d");
  if (static_cast<std::int64_t>(ids.size()) != m) throw InvalidArgument("embedding table: ids length mismatch");
  if (content_labels && static_cast<std::int64_t>(content_labels->size()) != m)
    throw InvalidArgument("embedding table: content label length mismatch");
  if (m > 0 && !torch::isfinite(vectors).all().item<bool>())
    throw InvalidArgument("embedding table contains non-finite values");
}

EmbeddingTable embed_with(model::Encoder& encoder, model::ProjectionHead* projection,
                          const data::AugmentationConfig& preprocessing, const data::Dataset& dataset,
                          model::AttachPoint attach_point, std::int64_t chunk) {
  const bool want_z = attach_point == model::AttachPoint::projection_output;
  if (want_z && (projection == nullptr || !*projection))
    throw InvalidArgument("projection_output embeddings need a projection head (stage-1 checkpoints have none)");
  if (dataset.images.size(1) != encoder.spec().in_channels)
    throw InvalidArgument("dataset has " + std::to_string(dataset.images.size(1)) + " channels, encoder expects " +
                          std::to_string(encoder.spec().in_channels));

  const bool enc_was_training = encoder.is_training();
  const bool proj_was_training = want_z && (*projection)->is_training();
  encoder.train(false);
  if (want_z) (*projection)->train(false);

  torch::NoGradGuard guard;
  std::vector<torch::Tensor> parts;
  for (std::int64_t start = 0; start < dataset.size(); start += chunk) {
    const std::int64_t end = std::min(dataset.size(), start + chunk);
    auto views = data::eval_view(dataset.images.slice(0, start, end), preprocessing);
    auto h = encoder.forward(views);
    parts.push_back((want_z ? model::project(*projection, h) : h).to(torch::kDouble));
  }
  encoder.train(enc_was_training);
  if (want_z) (*projection)->train(proj_was_training);

  EmbeddingTable t;
  t.vectors = parts.empty() ? torch::zeros({0, 0}, torch::kDouble) : torch::cat(parts, 0);
  t.domain_labels = dataset.domain_labels;
  t.content_labels = dataset.content_labels;
  t.ids = dataset.ids;
  t.validate();
  return t;
}

EmbeddingTable embed_dataset(const CheckpointBundle& checkpoint, const data::Dataset& dataset,
                             model::AttachPoint attach_point) {
  auto projection = checkpoint.projection;
  return embed_with(*checkpoint.encoder, projection ? &projection : nullptr, checkpoint.augmentation, dataset,
                    attach_point);
}

double linear_probe_accuracy(const torch::Tensor& features, const std::vector<std::int64_t>& labels,
                             std::uint64_t seed, const ProbeOptions& opts) {
  if (features.dim() != 2 || features.size(0) != static_cast<std::int64_t>(labels.size()))
    throw InvalidArgument("probe: features must be M x d with one label per row");
  std::map<std::int64_t, std::int64_t> counts;
  for (auto l : labels) {
    if (l < 0) throw InvalidArgument("probe: negative label");
    ++counts[l];
  }
  if (counts.size() < 2) throw InvalidArgument("probe needs at least 2 classes");
  for (const auto& [cls, n] : counts)
    if (n < opts.min_per_class)
      throw InvalidArgument("probe needs >= " + std::to_string(opts.min_per_class) + " samples per class; class " +
                            std::to_string(cls) + " has " + std::to_string(n));

  const auto [train, test] = data::stratified_split(labels, opts.train_fraction, seed);
  const std::int64_t num_classes = counts.rbegin()->first + 1;
  torch::NoGradGuard outer;
  const auto x = features.to(torch::kDouble);
  const auto y = torch::tensor(labels, torch::kLong);
  const auto tr = torch::tensor(train, torch::kLong), te = torch::tensor(test, torch::kLong);
  const auto xtr_raw = x.index_select(0, tr);
  const auto mu = xtr_raw.mean(0);
  const auto sd = xtr_raw.std(0) + 1e-8;
  const auto xtr = (xtr_raw - mu) / sd, xte = (x.index_select(0, te) - mu) / sd;
  const auto ytr = y.index_select(0, tr), yte = y.index_select(0, te);

  auto w = torch::zeros({x.size(1), num_classes}, torch::kDouble).set_requires_grad(true);
  auto b = torch::zeros({num_classes}, torch::kDouble).set_requires_grad(true);
  torch::optim::LBFGS opt({w, b}, torch::optim::LBFGSOptions(1.0).max_iter(opts.max_iter).line_search_fn("strong_wolfe"));
  {
    torch::AutoGradMode enable(true);
    opt.step([&] {
      opt.zero_grad();
      auto loss = F::cross_entropy(torch::matmul(xtr, w) + b, ytr) + opts.l2_penalty * (w * w).sum();
      loss.backward();
      return loss;
    });
  }
  const auto pred = (torch::matmul(xte, w) + b).argmax(1);
  return pred.eq(yte).to(torch::kDouble).mean().item<double>();
}

double domain_probe_accuracy(const EmbeddingTable& table, std::uint64_t seed, const ProbeOptions& opts) {
  table.validate();
  return linear_probe_accuracy(table.vectors, table.domain_labels, seed, opts);
}

double content_probe_accuracy(const EmbeddingTable& table, std::uint64_t seed, const ProbeOptions& opts) {
  table.validate();
  if (!table.content_labels) throw InvalidArgument("content probe needs content labels (synthetic data only)");
  return linear_probe_accuracy(table.vectors, *table.content_labels, seed, opts);
}

double knn_domain_purity(const EmbeddingTable& table, std::int64_t k) {
  table.validate();
  const std::int64_t m = table.rows();
  if (k < 1) throw InvalidArgument("knn purity needs k >= 1");
  if (k >= m) throw InvalidArgument("knn purity needs k < M (k=" + std::to_string(k) + ", M=" + std::to_string(m) + ")");
  torch::NoGradGuard guard;
  const auto z = model::l2_normalize_rows(table.vectors.to(torch::kDouble));
  double total = 0.0;
  std::vector<std::int64_t> order(static_cast<std::size_t>(m));
  constexpr std::int64_t kChunk = 256;
  for (std::int64_t start = 0; start < m; start += kChunk) {
    const std::int64_t end = std::min(m, start + kChunk);
    const auto sims = torch::matmul(z.slice(0, start, end), z.t()).contiguous();
    const auto acc = sims.accessor<double, 2>();
    for (std::int64_t r = 0; r < end - start; ++r) {
      const std::int64_t i = start + r;
      std::iota(order.begin(), order.end(), 0);
      order.erase(order.begin() + i);
      std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::int64_t a, std::int64_t b) {
        if (acc[r][a] != acc[r][b]) return acc[r][a] > acc[r][b];
        return a < b;
      });
      std::int64_t same = 0;
      for (std::int64_t n = 0; n < k; ++n)
        same += table.domain_labels[static_cast<std::size_t>(order[n])] == table.domain_labels[static_cast<std::size_t>(i)];
      total += static_cast<double>(same) / static_cast<double>(k);
      order.resize(static_cast<std::size_t>(m));
    }
  }
  return total / static_cast<double>(m);
}

ProjectionMethod parse_projection_method(const std::string& s) {
  if (s == "pca") return ProjectionMethod::pca;
  if (s == "tsne") return ProjectionMethod::tsne;
  throw InvalidArgument("unknown projection method '" + s + "' (pca | tsne)");
}

torch::Tensor pca_2d(const torch::Tensor& x_in) {
  torch::NoGradGuard guard;
  const auto x = x_in.to(torch::kDouble);
  const auto centered = x - x.mean(0, /*keepdim=*/true);
  auto [u, s, vh] = torch::linalg_svd(centered, /*full_matrices=*/false);
  const std::int64_t comps = std::min<std::int64_t>(2, vh.size(0));
  auto basis = vh.slice(0, 0, comps).clone();
  for (std::int64_t c = 0; c < comps; ++c) {
    auto row = basis[c];
    const auto a = row.accessor<double, 1>();
    for (std::int64_t j = 0; j < row.size(0); ++j) {
      if (std::abs(a[j]) > 1e-12) {
        if (a[j] < 0) row.neg_();
        break;
      }
    }
  }
  auto coords = torch::matmul(centered, basis.t());
  if (comps < 2) coords = torch::cat({coords, torch::zeros({x.size(0), 2 - comps}, torch::kDouble)}, 1);
  return coords.contiguous();
}

torch::Tensor project_2d(const EmbeddingTable& table, ProjectionMethod method, std::uint64_t seed,
                         const TsneOptions& tsne) {
  table.validate();
  if (table.rows() < 3) throw InvalidArgument("2-D projection needs at least 3 points");
  return method == ProjectionMethod::pca ? pca_2d(table.vectors) : tsne_2d(table.vectors, seed, tsne);
}

fs::path export_scatter(const torch::Tensor& coords_in, const std::vector<std::int64_t>& labels,
                        const fs::path& out_path, const std::vector<std::string>& label_names,
                        const std::vector<std::string>& ids) {
  if (coords_in.dim() != 2 || coords_in.size(1) != 2) throw InvalidArgument("scatter coordinates must be M x 2");
  const std::int64_t m = coords_in.size(0);
  if (m == 0) throw InvalidArgument("scatter export needs at least one point");
  if (static_cast<std::int64_t>(labels.size()) != m) throw InvalidArgument("scatter: labels length does not match coordinates");
  if (!ids.empty() && static_cast<std::int64_t>(ids.size()) != m) throw InvalidArgument("scatter: ids length does not match coordinates");
  ensure_parent_writable(out_path);
  const auto coords = coords_in.to(torch::kDouble).contiguous();
  const auto acc = coords.accessor<double, 2>();
  if (!torch::isfinite(coords).all().item<bool>()) throw InvalidArgument("scatter coordinates must be finite");

  const fs::path csv_path = fs::path(out_path).replace_extension(".csv");
  {
    std::ofstream out(csv_path);
    if (!out) throw RuntimeFailure("cannot write " + csv_path.string());
    out << "id,x,y,label\n";
    for (std::int64_t i = 0; i < m; ++i)
      out << csv_field(ids.empty() ? std::to_string(i) : ids[static_cast<std::size_t>(i)]) << ',' << fmt17(acc[i][0])
          << ',' << fmt17(acc[i][1]) << ',' << labels[static_cast<std::size_t>(i)] << '\n';
  }

  constexpr int kSide = 800, kMargin = 50, kLegendW = 190;
  cv::Mat canvas(kSide, kSide + kLegendW, CV_8UC3, cv::Scalar(255, 255, 255));
  double xmin = acc[0][0], xmax = xmin, ymin = acc[0][1], ymax = ymin;
  for (std::int64_t i = 1; i < m; ++i) {
    xmin = std::min(xmin, acc[i][0]);
    xmax = std::max(xmax, acc[i][0]);
    ymin = std::min(ymin, acc[i][1]);
    ymax = std::max(ymax, acc[i][1]);
  }
  const double xs = xmax > xmin ? xmax - xmin : 1.0, ys = ymax > ymin ? ymax - ymin : 1.0;
  const double span = kSide - 2 * kMargin;
  cv::rectangle(canvas, {kMargin - 10, kMargin - 10}, {kSide - kMargin + 10, kSide - kMargin + 10}, {200, 200, 200}, 1);
  for (std::int64_t i = 0; i < m; ++i) {
    const int px = kMargin + static_cast<int>(std::lround((acc[i][0] - xmin) / xs * span));
    const int py = kSide - kMargin - static_cast<int>(std::lround((acc[i][1] - ymin) / ys * span));
    cv::circle(canvas, {px, py}, 4, label_colour(labels[static_cast<std::size_t>(i)]), cv::FILLED, cv::LINE_AA);
  }
  std::set<std::int64_t> distinct(labels.begin(), labels.end());
  int row = 0;
  for (auto l : distinct) {
    const int y = kMargin + 22 * row++;
    cv::circle(canvas, {kSide + 12, y}, 6, label_colour(l), cv::FILLED, cv::LINE_AA);
    std::string name = (l >= 0 && l < static_cast<std::int64_t>(label_names.size()))
                           ? label_names[static_cast<std::size_t>(l)]
                           : "label " + std::to_string(l);
    if (name.size() > 22) name = name.substr(0, 22);
    cv::putText(canvas, name, {kSide + 24, y + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45, {30, 30, 30}, 1, cv::LINE_AA);
  }
  if (!cv::imwrite(out_path.string(), canvas)) throw RuntimeFailure("cannot write scatter image " + out_path.string());
  return csv_path;
}

std::vector<ScatterRow> read_scatter_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "id,x,y,label") throw RuntimeFailure("unexpected scatter CSV header in " + path.string());
  std::vector<ScatterRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw RuntimeFailure("malformed scatter CSV row in " + path.string());
    rows.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stoll(f[3])});
  }
  return rows;
}

void write_embeddings_csv(const EmbeddingTable& table, const fs::path& path) {
  table.validate();
  ensure_parent_writable(path);
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  const auto v = table.vectors.to(torch::kDouble).contiguous();
  const auto acc = v.accessor<double, 2>();
  out << "id,domain_label";
  if (table.content_labels) out << ",content_label";
  for (std::int64_t j = 0; j < table.dim(); ++j) out << ",v" << j;
  out << '\n';
  for (std::int64_t i = 0; i < table.rows(); ++i) {
    const auto si = static_cast<std::size_t>(i);
    out << csv_field(table.ids[si]) << ',' << table.domain_labels[si];
    if (table.content_labels) out << ',' << (*table.content_labels)[si];
    for (std::int64_t j = 0; j < table.dim(); ++j) out << ',' << fmt17(acc[i][j]);
    out << '\n';
  }
}

EmbeddingTable read_embeddings_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "domain_label")
    throw RuntimeFailure("unexpected embeddings CSV header in " + path.string());
  const bool has_content = header[2] == "content_label";
  const std::size_t first_v = has_content ? 3 : 2;
  const std::int64_t d = static_cast<std::int64_t>(header.size() - first_v);
  EmbeddingTable t;
  std::vector<double> values;
  std::vector<std::int64_t> content;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw RuntimeFailure("malformed embeddings CSV row in " + path.string());
    t.ids.push_back(f[0]);
    t.domain_labels.push_back(std::stoll(f[1]));
    if (has_content) content.push_back(std::stoll(f[2]));
    for (std::size_t j = first_v; j < f.size(); ++j) values.push_back(std::stod(f[j]));
  }
  const auto m = static_cast<std::int64_t>(t.ids.size());
  t.vectors = torch::from_blob(values.data(), {m, d}, torch::kDouble).clone();
  if (has_content) t.content_labels = std::move(content);
  t.validate();
  return t;
}

}  // namespace invenc::eval
