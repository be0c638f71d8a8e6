// Copyright 2026 The invenc Authors.
// SPDX-License-Identifier: Apache-2.0
#include "invenc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "invenc/error.hpp"
#include "invenc/rng.hpp"

namespace invenc::data {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

constexpr std::uint64_t kStreamSynthetic = 0x5359;
constexpr std::uint64_t kStreamShuffle = 0x5348;
constexpr std::uint64_t kStreamSplit = 0x5350;

const char* kTextureNames[] = {"flat", "stripes", "checker", "grain"};

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

// Inside test for content class c, relative to the shape center, radius r.
bool inside_shape(std::int64_t c, double dx, double dy, double r) {
  switch (c) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return dy <= 0.8 * r && std::abs(dx) * 1.8 <= dy + r;   // upright triangle
    case 2: return std::abs(dx) <= r && std::abs(dy) <= 0.6 * r;     // wide rectangle
    case 3: return std::abs(dx) + std::abs(dy) <= r;                 // diamond
    case 4: {                                                        // ring
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
    case 5: return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) ||
                   (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);   // plus
    default: {
      // Regular polygon with c - 1 sides (pentagon upward), via the apothem test.
      const std::int64_t sides = c - 1;
      const double apothem = r * std::cos(M_PI / static_cast<double>(sides));
      for (std::int64_t s = 0; s < sides; ++s) {
        const double a = 2.0 * M_PI * static_cast<double>(s) / static_cast<double>(sides) - M_PI / 2;
        if (dx * std::cos(a) + dy * std::sin(a) > apothem) return false;
      }
      return true;
    }
  }
}

torch::Tensor mat_to_chw(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0).contiguous();
}

cv::Mat chw_to_bgr_mat(const torch::Tensor& chw) {
  auto hwc = quantize_u8(chw).permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(hwc.size(0)), w = static_cast<int>(hwc.size(1));
  cv::Mat rgb(h, w, CV_8UC3, hwc.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

torch::Tensor luma(const torch::Tensor& v) {
  // v: ... x 3 x H x W
  return (0.299 * v.select(-3, 0) + 0.587 * v.select(-3, 1) + 0.114 * v.select(-3, 2)).unsqueeze(-3);
}

torch::Tensor resize_bilinear(const torch::Tensor& batch, std::int64_t out_h, std::int64_t out_w) {
  if (batch.size(2) == out_h && batch.size(3) == out_w) return batch;
  return F::interpolate(batch, F::InterpolateFuncOptions()
                                   .size(std::vector<std::int64_t>{out_h, out_w})
                                   .mode(torch::kBilinear)
                                   .align_corners(false));
}

torch::Tensor gaussian_blur(const torch::Tensor& v, double sigma) {
  const std::int64_t c = v.size(1);
  auto x = torch::arange(-2, 3, torch::kFloat32);
  auto k = torch::exp(-(x * x) / (2.0 * sigma * sigma));
  k = k / k.sum();
  auto padded = F::pad(v, F::PadFuncOptions({2, 2, 2, 2}).mode(torch::kReflect));
  auto kh = k.view({1, 1, 1, 5}).repeat({c, 1, 1, 1});
  auto kv = k.view({1, 1, 5, 1}).repeat({c, 1, 1, 1});
  auto out = F::conv2d(padded, kh, F::Conv2dFuncOptions().groups(c));
  return F::conv2d(out, kv, F::Conv2dFuncOptions().groups(c));
}

// One stochastic view. The draw order is fixed so that a given stream always
// produces the same view regardless of which options are active.
torch::Tensor augment_one(const torch::Tensor& chw, const AugmentationConfig& cfg, CounterRng rng) {
  const std::int64_t h = chw.size(1), w = chw.size(2);
  const double scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
  const double side = std::sqrt(scale);
  const std::int64_t ch = std::clamp<std::int64_t>(std::llround(h * side), 1, h);
  const std::int64_t cw = std::clamp<std::int64_t>(std::llround(w * side), 1, w);
  const auto y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - ch + 1)));
  const auto x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - cw + 1)));
  const bool flip = rng.bernoulli(cfg.hflip_probability);
  const double j = cfg.jitter_strength;
  const double bf = 1.0 + rng.uniform(-j, j);
  const double cf = 1.0 + rng.uniform(-j, j);
  const double sf = 1.0 + rng.uniform(-j, j);
  const bool gray = rng.bernoulli(cfg.grayscale_probability);
  const bool blur = rng.bernoulli(cfg.blur_probability);
  const double sigma = rng.uniform(0.1, 2.0);

  auto v = chw.slice(1, y0, y0 + ch).slice(2, x0, x0 + cw).unsqueeze(0);
  v = resize_bilinear(v, cfg.input_size, cfg.input_size);
  if (flip) v = v.flip({3});
  if (bf != 1.0) v = (v * bf).clamp(0.0, 1.0);
  if (cf != 1.0) {
    const auto m = v.mean();
    v = ((v - m) * cf + m).clamp(0.0, 1.0);
  }
  const bool rgb = v.size(1) == 3;
  if (rgb && sf != 1.0) {
    const auto g = luma(v);
    v = ((v - g) * sf + g).clamp(0.0, 1.0);
  }
  if (rgb && gray) v = luma(v).expand({-1, 3, -1, -1});
  if (blur) v = gaussian_blur(v, sigma);
  return v.squeeze(0).contiguous();
}

}  // namespace

ImageRecord Dataset::record(std::int64_t i) const {
  if (i < 0 || i >= size()) throw InvalidArgument("record index out of range");
  ImageRecord r;
  r.pixels = images[i];
  r.domain_label = domain_labels[static_cast<std::size_t>(i)];
  if (content_labels) r.content_label = (*content_labels)[static_cast<std::size_t>(i)];
  r.source_path = ids[static_cast<std::size_t>(i)];
  return r;
}

void Dataset::validate() const {
  if (images.dim() != 4 || images.size(0) != size())
    throw InvalidArgument("dataset images must be M x C x H x W with M = label count");
  if (static_cast<std::int64_t>(ids.size()) != size())
    throw InvalidArgument("dataset ids do not match record count");
  if (content_labels && static_cast<std::int64_t>(content_labels->size()) != size())
    throw InvalidArgument("dataset content labels do not match record count");
  for (auto l : domain_labels)
    if (l < 0 || l >= num_domains()) throw InvalidArgument("domain label out of range");
}

void SyntheticSpec::validate() const {
  if (num_domains < 2) throw InvalidArgument("synthetic.num_domains must be >= 2");
  if (num_content_classes < 2) throw InvalidArgument("synthetic.num_content_classes must be >= 2");
  if (images_per_domain < 1) throw InvalidArgument("synthetic.images_per_domain must be >= 1");
  if (image_size < 32) throw InvalidArgument("synthetic.image_size must be >= 32");
}

void AugmentationConfig::validate() const {
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
    throw InvalidArgument("crop scale range must satisfy 0 < min <= max <= 1");
  if (jitter_strength < 0.0 || jitter_strength >= 1.0)
    throw InvalidArgument("jitter_strength must be in [0, 1)");
  for (double p : {hflip_probability, grayscale_probability, blur_probability})
    if (p < 0.0 || p > 1.0) throw InvalidArgument("augmentation probabilities must be in [0, 1]");
  if (input_size < 32) throw InvalidArgument("augmentation.input_size must be >= 32");
  if (!(eval_center_crop > 0.0 && eval_center_crop <= 1.0))
    throw InvalidArgument("eval_center_crop must be in (0, 1]");
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = {{"num_domains", s.num_domains},
       {"num_content_classes", s.num_content_classes},
       {"images_per_domain", s.images_per_domain},
       {"image_size", s.image_size},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s.num_domains = j.at("num_domains").get<std::int64_t>();
  s.num_content_classes = j.at("num_content_classes").get<std::int64_t>();
  s.images_per_domain = j.at("images_per_domain").get<std::int64_t>();
  s.image_size = j.at("image_size").get<std::int64_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const AugmentationConfig& a) {
  j = {{"crop_scale_min", a.crop_scale_min},
       {"crop_scale_max", a.crop_scale_max},
       {"jitter_strength", a.jitter_strength},
       {"hflip_probability", a.hflip_probability},
       {"grayscale_probability", a.grayscale_probability},
       {"blur_probability", a.blur_probability},
       {"seed_stream", a.seed_stream},
       {"input_size", a.input_size},
       {"eval_center_crop", a.eval_center_crop}};
}

void from_json(const nlohmann::json& j, AugmentationConfig& a) {
  a.crop_scale_min = j.at("crop_scale_min").get<double>();
  a.crop_scale_max = j.at("crop_scale_max").get<double>();
  a.jitter_strength = j.at("jitter_strength").get<double>();
  a.hflip_probability = j.at("hflip_probability").get<double>();
  a.grayscale_probability = j.value("grayscale_probability", 0.0);
  a.blur_probability = j.value("blur_probability", 0.0);
  a.seed_stream = j.value("seed_stream", std::uint64_t{0});
  a.input_size = j.value("input_size", std::int64_t{64});
  a.eval_center_crop = j.value("eval_center_crop", 0.8);
}

Dataset load_dataset(const fs::path& root, const LoadOptions& opts) {
  if (!fs::is_directory(root)) throw RuntimeFailure("dataset root is not a directory: " + root.string());
  std::vector<fs::path> domains;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) domains.push_back(e.path());
  if (domains.empty()) throw RuntimeFailure("dataset root has no domain subdirectories: " + root.string());
  std::sort(domains.begin(), domains.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

  std::map<std::string, std::int64_t> manifest_content;
  if (const auto mpath = root / "manifest.json"; fs::exists(mpath)) {
    std::ifstream in(mpath);
    const auto m = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (m.is_object() && m.contains("files"))
      for (const auto& f : m["files"])
        if (f.contains("content_label") && !f["content_label"].is_null())
          manifest_content[f.at("path").get<std::string>()] = f["content_label"].get<std::int64_t>();
  }

  Dataset ds;
  std::vector<torch::Tensor> images;
  for (std::size_t g = 0; g < domains.size(); ++g) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(domains[g]))
      if (e.is_regular_file() && has_image_extension(e.path())) files.push_back(e.path());
    if (files.empty()) throw RuntimeFailure("domain directory has no images: " + domains[g].string());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    ds.domain_names.push_back(domains[g].filename().string());
    for (const auto& f : files) {
      cv::Mat img = cv::imread(f.string(), cv::IMREAD_COLOR);
      if (img.empty()) throw RuntimeFailure("cannot read image: " + f.string());
      if (opts.image_size > 0 && (img.rows != opts.image_size || img.cols != opts.image_size)) {
        const bool shrink = img.rows > opts.image_size || img.cols > opts.image_size;
        cv::Mat resized;
        cv::resize(img, resized, cv::Size(static_cast<int>(opts.image_size), static_cast<int>(opts.image_size)),
                   0, 0, shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
        img = resized;
      }
      auto t = mat_to_chw(img);
      if (!images.empty() && !t.sizes().equals(images.front().sizes()))
        throw RuntimeFailure("image size differs from the first image (set an image_size): " + f.string());
      images.push_back(t);
      ds.domain_labels.push_back(static_cast<std::int64_t>(g));
      ds.ids.push_back(ds.domain_names.back() + "/" + f.filename().string());
    }
  }
  ds.images = torch::stack(images);
  if (!manifest_content.empty()) {
    std::vector<std::int64_t> content;
    for (const auto& id : ds.ids) {
      auto it = manifest_content.find(id);
      if (it == manifest_content.end()) {
        content.clear();
        break;
      }
      content.push_back(it->second);
    }
    if (!content.empty()) ds.content_labels = std::move(content);
  }
  ds.validate();
  return ds;
}

Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  const std::int64_t S = spec.image_size;
  const std::int64_t total = spec.num_domains * spec.images_per_domain;
  // Style lives in chroma (YCbCr), content in luminance: each domain is a hue
  // direction plus a chroma texture, shapes are brighter than background.
  constexpr double kChroma = 0.12, kTexture = 0.06, kBackY = 0.35, kShapeY = 0.70;

  Dataset ds;
  ds.images = torch::empty({total, 3, S, S}, torch::kFloat32);
  std::vector<std::int64_t> content;
  auto acc = ds.images.accessor<float, 4>();
  std::int64_t n = 0;
  for (std::int64_t g = 0; g < spec.num_domains; ++g) {
    const double theta = 2.0 * M_PI * static_cast<double>(g) / static_cast<double>(spec.num_domains);
    const double u0 = std::cos(theta), u1 = std::sin(theta);
    const double w0 = -u1, w1 = u0;
    const std::int64_t texture = g % 4;
    char name[64];
    std::snprintf(name, sizeof(name), "domain_%02lld_%s", static_cast<long long>(g), kTextureNames[texture]);
    ds.domain_names.emplace_back(name);
    for (std::int64_t k = 0; k < spec.images_per_domain; ++k, ++n) {
      const std::int64_t c = k % spec.num_content_classes;
      CounterRng rng({spec.seed, kStreamSynthetic, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(k)});
      const double r = rng.uniform(0.18, 0.32) * static_cast<double>(S);
      const double cx = rng.uniform(r, static_cast<double>(S) - r);
      const double cy = rng.uniform(r, static_cast<double>(S) - r);
      const double bright = rng.uniform(0.95, 1.05);
      for (std::int64_t y = 0; y < S; ++y) {
        const double py = static_cast<double>(y) + 0.5;
        for (std::int64_t x = 0; x < S; ++x) {
          const double px = static_cast<double>(x) + 0.5;
          double t = 0.0;
          switch (texture) {
            case 1: t = (static_cast<std::int64_t>(std::floor(py / 4.0)) % 2 == 0) ? 1.0 : -1.0; break;
            case 2: t = ((static_cast<std::int64_t>(std::floor(py / 6.0)) +
                          static_cast<std::int64_t>(std::floor(px / 6.0))) % 2 == 0) ? 1.0 : -1.0; break;
            case 3: t = rng.uniform(-1.0, 1.0); break;
            default: break;
          }
          const double Y = (inside_shape(c, px - cx, py - cy, r) ? kShapeY : kBackY) * bright;
          const double cb = kChroma * u0 + kTexture * t * w0;
          const double cr = kChroma * u1 + kTexture * t * w1;
          const double rgb[3] = {Y + 1.402 * cr, Y - 0.344136 * cb - 0.714136 * cr, Y + 1.772 * cb};
          for (int ch = 0; ch < 3; ++ch) acc[n][ch][y][x] = static_cast<float>(std::clamp(rgb[ch], 0.0, 1.0));
        }
      }
      ds.domain_labels.push_back(g);
      content.push_back(c);
      char id[96];
      std::snprintf(id, sizeof(id), "%s/img_%05lld", name, static_cast<long long>(k));
      ds.ids.emplace_back(id);
    }
  }
  ds.content_labels = std::move(content);
  return ds;
}

torch::Tensor quantize_u8(const torch::Tensor& chw) {
  return chw.mul(255.0).round().clamp(0.0, 255.0).to(torch::kUInt8);
}

void export_dataset(const Dataset& dataset, const fs::path& root, const nlohmann::json& provenance) {
  dataset.validate();
  const fs::path parent = root.has_parent_path() ? root.parent_path() : fs::path(".");
  if (!fs::is_directory(parent))
    throw RuntimeFailure("output parent directory does not exist: " + parent.string());
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw RuntimeFailure("cannot create dataset directory " + root.string() + ": " + ec.message());

  nlohmann::json files = nlohmann::json::array();
  for (std::int64_t i = 0; i < dataset.size(); ++i) {
    const auto& name = dataset.domain_names[static_cast<std::size_t>(dataset.domain_labels[i])];
    std::string stem = fs::path(dataset.ids[static_cast<std::size_t>(i)]).stem().string();
    const std::string rel = name + "/" + stem + ".png";
    fs::create_directories(root / name);
    if (!cv::imwrite((root / rel).string(), chw_to_bgr_mat(dataset.images[i])))
      throw RuntimeFailure("cannot write image: " + (root / rel).string());
    nlohmann::json f = {{"path", rel}, {"domain_label", dataset.domain_labels[i]}};
    f["content_label"] = dataset.content_labels ? nlohmann::json((*dataset.content_labels)[i]) : nlohmann::json();
    files.push_back(std::move(f));
  }
  nlohmann::json manifest = {{"num_domains", dataset.num_domains()},
                             {"domain_names", dataset.domain_names},
                             {"num_images", dataset.size()},
                             {"provenance", provenance},
                             {"files", std::move(files)}};
  std::ofstream out(root / "manifest.json");
  if (!out) throw RuntimeFailure("cannot write " + (root / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

std::pair<torch::Tensor, torch::Tensor> augment_views(const ImageRecord& record,
                                                      const AugmentationConfig& cfg,
                                                      std::uint64_t index) {
  if (record.pixels.dim() != 3) throw InvalidArgument("augment_views expects a C x H x W image");
  torch::NoGradGuard guard;
  return {augment_one(record.pixels, cfg, CounterRng({cfg.seed_stream, index, 0})),
          augment_one(record.pixels, cfg, CounterRng({cfg.seed_stream, index, 1}))};
}

torch::Tensor eval_view(const torch::Tensor& images, const AugmentationConfig& cfg) {
  torch::NoGradGuard guard;
  const bool single = images.dim() == 3;
  auto batch = single ? images.unsqueeze(0) : images;
  const std::int64_t h = batch.size(2), w = batch.size(3);
  const std::int64_t ch = std::clamp<std::int64_t>(std::llround(h * cfg.eval_center_crop), 1, h);
  const std::int64_t cw = std::clamp<std::int64_t>(std::llround(w * cfg.eval_center_crop), 1, w);
  const std::int64_t y0 = (h - ch) / 2, x0 = (w - cw) / 2;
  auto out = resize_bilinear(batch.slice(2, y0, y0 + ch).slice(3, x0, x0 + cw), cfg.input_size, cfg.input_size);
  out = out.contiguous();
  return single ? out.squeeze(0) : out;
}

std::vector<Batch> make_batches(const Dataset& dataset, std::int64_t batch_size, std::uint64_t seed,
                                bool drop_last) {
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  const std::int64_t m = dataset.size();
  if (drop_last && batch_size > m)
    throw InvalidArgument("batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                          std::to_string(m) + " with drop_last");
  const auto order = permutation(m, mix_keys({seed, kStreamShuffle}));
  std::vector<Batch> batches;
  for (std::int64_t start = 0; start < m; start += batch_size) {
    const std::int64_t end = std::min(m, start + batch_size);
    if (drop_last && end - start < batch_size) break;
    Batch b;
    b.indices.assign(order.begin() + start, order.begin() + end);
    const auto idx = torch::tensor(b.indices, torch::kLong);
    b.images = dataset.images.index_select(0, idx);
    std::vector<std::int64_t> d;
    for (auto i : b.indices) d.push_back(dataset.domain_labels[static_cast<std::size_t>(i)]);
    b.domain_labels = torch::tensor(d, torch::kLong);
    if (dataset.content_labels) {
      std::vector<std::int64_t> c;
      for (auto i : b.indices) c.push_back((*dataset.content_labels)[static_cast<std::size_t>(i)]);
      b.content_labels = torch::tensor(c, torch::kLong);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> stratified_split(
    const std::vector<std::int64_t>& labels, double train_fraction, std::uint64_t seed) {
  std::map<std::int64_t, std::vector<std::int64_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(static_cast<std::int64_t>(i));
  std::vector<std::int64_t> train, test;
  for (auto& [cls, idx] : by_class) {
    const auto perm = permutation(static_cast<std::int64_t>(idx.size()),
                                  mix_keys({seed, kStreamSplit, static_cast<std::uint64_t>(cls)}));
    const auto k = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    for (std::size_t r = 0; r < perm.size(); ++r)
      (r < k ? train : test).push_back(idx[static_cast<std::size_t>(perm[r])]);
  }
  return {train, test};
}

}  // namespace invenc::data
