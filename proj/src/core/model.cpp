#include "s2c/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "s2c/error.hpp"
#include "s2c/metrics.hpp"
#include "s2c/synth.hpp"
#include "s2c/util.hpp"

namespace s2c::model {

// --- ArchSpec / enums ----------------------------------------------------------

void ArchSpec::validate() const {
  require(levels >= 1, "architecture needs levels >= 1");
  require(base_channels >= 1, "architecture needs base_channels >= 1");
  require(in_channels >= 1, "architecture needs in_channels >= 1");
  require(kernel >= 1 && kernel % 2 == 1, "architecture kernel must be odd");
}

std::string ArchSpec::describe() const {
  return "levels=" + std::to_string(levels) + " base=" + std::to_string(base_channels) +
         " in=" + std::to_string(in_channels) + " kernel=" + std::to_string(kernel);
}

ArchSpec ArchSpec::parse(const std::string& text) {
  ArchSpec a;
  for (const auto& word : split_ws(text)) {
    auto [k, v] = split_kv(word, "architecture");
    if (k == "levels") a.levels = parse_int(v, "levels");
    else if (k == "base") a.base_channels = parse_int(v, "base");
    else if (k == "in") a.in_channels = parse_int(v, "in");
    else if (k == "kernel") a.kernel = parse_int(v, "kernel");
    else fail(ErrorKind::format, "unknown architecture field " + k);
  }
  a.validate();
  return a;
}

const char* to_string(ModelKind k) { return k == ModelKind::unet ? "unet" : "refiner"; }
const char* to_string(LabelKind k) { return k == LabelKind::coarse ? "coarse" : "fine"; }
const char* to_string(Schedule s) { return s == Schedule::sequential ? "sequential" : "joint"; }

const char* to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine"; }

LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  fail(ErrorKind::usage, "unknown lr schedule '" + s + "' (expected constant or cosine)");
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "unet") return ModelKind::unet;
  if (s == "refiner") return ModelKind::refiner;
  fail(ErrorKind::usage, "unknown model '" + s + "' (expected unet or refiner)");
}

LabelKind parse_label_kind(const std::string& s) {
  if (s == "coarse") return LabelKind::coarse;
  if (s == "fine") return LabelKind::fine;
  fail(ErrorKind::usage, "unknown label kind '" + s + "' (expected coarse or fine)");
}

Schedule parse_schedule(const std::string& s) {
  if (s == "sequential") return Schedule::sequential;
  if (s == "joint") return Schedule::joint;
  fail(ErrorKind::usage, "unknown schedule '" + s + "' (expected sequential or joint)");
}

void TrainConfig::validate() const {
  require(epochs >= 0, "epochs must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(learning_rate > 0.0, "learning rate must be positive");
  require(weight_pos > 0.0, "weight_pos must be positive");
  require(point_sigma >= 0.0, "point_sigma must be >= 0");
  require(levels >= 1 && base_channels >= 1, "invalid architecture in train config");
  require(!use_points || !points_tag.empty(), "use_points requires a point scenario tag");
}

std::string TrainConfig::describe() const {
  std::ostringstream s;
  s << "labels=" << to_string(labels) << " points=" << (use_points ? points_tag : "none") << " epochs=" << epochs
    << " stage2_epochs=" << stage2_epochs << " batch=" << batch_size << " lr=" << format_double(learning_rate) << " lr_schedule=" << to_string(lr_schedule)
    << " optimizer=" << nn::to_string(optimizer) << " weight_pos=" << format_double(weight_pos) << " seed=" << seed
    << " schedule=" << to_string(schedule) << " levels=" << levels << " base=" << base_channels << " point_sigma=" << format_double(point_sigma);
  return s.str();
}

// --- UNet --------------------------------------------------------------------

namespace {

int width_at(const ArchSpec& s, int level) { return s.base_channels << level; }

}  // namespace

UNet::UNet(const ArchSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec.validate();
  auto rng = make_rng(seed, Stream::weight_init);
  const int k = spec.kernel;
  int in = spec.in_channels;
  for (int l = 0; l < spec.levels; ++l) {
    const int c = width_at(spec, l);
    params_.add_conv("enc" + std::to_string(l) + ".conv1", in, c, k, rng);
    params_.add_conv("enc" + std::to_string(l) + ".conv2", c, c, k, rng);
    in = c;
  }
  const int mid = width_at(spec, spec.levels);
  params_.add_conv("mid.conv1", in, mid, k, rng);
  params_.add_conv("mid.conv2", mid, mid, k, rng);
  for (int l = spec.levels - 1; l >= 0; --l) {
    const int c = width_at(spec, l);
    params_.add_conv("dec" + std::to_string(l) + ".conv1", width_at(spec, l + 1) + c, c, k, rng);
    params_.add_conv("dec" + std::to_string(l) + ".conv2", c, c, k, rng);
  }
  params_.add_conv("head", width_at(spec, 0), 1, 1, rng);
}

nn::Var UNet::forward(nn::Tape& t, nn::Var x) { return nn::sigmoid(t, forward_logits(t, x)); }

nn::Var UNet::forward_logits(nn::Tape& t, nn::Var x) {
  const auto& s = t.value(x).shape();
  const int div = 1 << spec_.levels;
  if (s.c != spec_.in_channels)
    fail(ErrorKind::usage, "network expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                               std::to_string(s.c));
  if (s.h % div || s.w % div)
    fail(ErrorKind::usage, "input " + std::to_string(s.h) + "x" + std::to_string(s.w) + " not divisible by 2^" +
                               std::to_string(spec_.levels));

  auto conv_relu = [&](nn::Var h, const std::string& name) {
    return nn::relu(t, nn::conv2d(t, h, t.param(params_, name + ".w"), t.param(params_, name + ".b")));
  };
  std::vector<nn::Var> skips;
  nn::Var h = x;
  for (int l = 0; l < spec_.levels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    h = conv_relu(conv_relu(h, p + ".conv1"), p + ".conv2");
    skips.push_back(h);
    h = nn::maxpool2(t, h);
  }
  h = conv_relu(conv_relu(h, "mid.conv1"), "mid.conv2");
  for (int l = spec_.levels - 1; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    h = nn::concat_channels(t, nn::upsample2(t, h), skips[static_cast<std::size_t>(l)]);
    h = conv_relu(conv_relu(h, p + ".conv1"), p + ".conv2");
  }
  return nn::conv2d(t, h, t.param(params_, "head.w"), t.param(params_, "head.b"));
}

nn::Tensor UNet::predict(const nn::Tensor& x) const {
  nn::Tape t(false);
  // A gradient-free tape only reads parameters.
  auto& self = const_cast<UNet&>(*this);
  return t.value(self.forward(t, t.input(x)));
}

nn::Tensor UNet::predict_logits(const nn::Tensor& x) const {
  nn::Tape t(false);
  auto& self = const_cast<UNet&>(*this);
  return t.value(self.forward_logits(t, t.input(x)));
}

// --- Model -------------------------------------------------------------------

Model Model::unet(const ArchSpec& spec, std::uint64_t seed) {
  Model m;
  m.kind_ = ModelKind::unet;
  m.stage1_ = UNet(spec, derive_seed(seed, 1));
  return m;
}

Model Model::refiner(const ArchSpec& stage1, const ArchSpec& stage2, bool use_points, std::uint64_t seed) {
  const int expected = stage1.in_channels + 1 + (use_points ? 1 : 0);
  if (stage2.in_channels != expected)
    fail(ErrorKind::usage, "stage-2 input channels must be " + std::to_string(expected) + " (imagery " +
                               std::to_string(stage1.in_channels) + " + coarse probability" +
                               (use_points ? " + points)" : ")") + ", got " + std::to_string(stage2.in_channels));
  Model m;
  m.kind_ = ModelKind::refiner;
  m.uses_points_ = use_points;
  m.stage1_ = UNet(stage1, derive_seed(seed, 1));
  m.stage2_ = UNet(stage2, derive_seed(seed, 2));
  auto& head = m.stage2_->params().value("head.w");
  std::fill(head.data().begin(), head.data().end(), 0.0);
  return m;
}

nn::Tensor tile_tensor(const MultispectralTile& tile) {
  const auto d = tile.data();
  return nn::Tensor({1, tile.channels(), tile.height(), tile.width()}, std::vector<double>(d.begin(), d.end()));
}

nn::Tensor mask_tensor(const BinaryMask& mask) {
  std::vector<double> d(mask.data().begin(), mask.data().end());
  return nn::Tensor({1, 1, mask.height(), mask.width()}, std::move(d));
}

nn::Tensor encode_points(const nn::Tensor& raster, double sigma) {
  require(sigma >= 0.0, "point encoding sigma must be >= 0");
  if (sigma == 0.0) return raster;
  const auto k = synth::gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const double peak = k[static_cast<std::size_t>(r)] * k[static_cast<std::size_t>(r)];
  const auto& s = raster.shape();
  nn::Tensor out(s);
  std::vector<double> tmp(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (int d = -r; d <= r; ++d)
            if (x + d >= 0 && x + d < s.w) acc += k[static_cast<std::size_t>(d + r)] * raster.at(n, c, y, x + d);
          tmp[static_cast<std::size_t>(y) * s.w + x] = acc;
        }
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (int d = -r; d <= r; ++d)
            if (y + d >= 0 && y + d < s.h) acc += k[static_cast<std::size_t>(d + r)] * tmp[static_cast<std::size_t>(y + d) * s.w + x];
          out.at(n, c, y, x) = std::min(1.0, acc / peak);
        }
    }
  return out;
}

namespace {

nn::Tensor concat(const nn::Tensor& a, const nn::Tensor& b) {
  nn::Tape t(false);
  return t.value(nn::concat_channels(t, t.input(a), t.input(b)));
}

nn::Tensor fuse(const nn::Tensor& images, const nn::Tensor& p1, const nn::Tensor* points) {
  auto x = concat(images, p1);
  return points ? concat(x, *points) : x;
}

nn::Tensor sigmoid_of(const nn::Tensor& logits) {
  nn::Tape t(false);
  return t.value(nn::sigmoid(t, t.input(logits)));
}

nn::Var refine_var(nn::Tape& t, UNet& stage2, nn::Var fused, nn::Var base_logits) {
  return nn::sigmoid(t, nn::add(t, base_logits, stage2.forward_logits(t, fused)));
}

nn::Tensor refine(const UNet& stage2, const nn::Tensor& images, const nn::Tensor& logits1, const nn::Tensor* points) {
  nn::Tape t(false);
  auto& s2 = const_cast<UNet&>(stage2);
  return t.value(refine_var(t, s2, t.input(fuse(images, sigmoid_of(logits1), points)), t.input(logits1)));
}

}  // namespace

nn::Tensor Model::stage1_probability(const nn::Tensor& images) const { return stage1_.predict(images); }

nn::Tensor Model::predict(const nn::Tensor& images, const nn::Tensor* points) const {
  if (images.shape().c != in_channels())
    fail(ErrorKind::usage, "model expects " + std::to_string(in_channels()) + " imagery channels, got " +
                               std::to_string(images.shape().c));
  if (uses_points_ && !points) fail(ErrorKind::usage, "this model was trained with points; a point raster is required");
  if (!uses_points_ && points) fail(ErrorKind::usage, "this model was trained without points; do not pass a point raster");
  if (kind_ == ModelKind::unet) return stage1_.predict(images);
  if (!points) return refine(*stage2_, images, stage1_.predict_logits(images), nullptr);
  const auto heat = encode_points(*points, config.point_sigma);
  return refine(*stage2_, images, stage1_.predict_logits(images), &heat);
}

Prediction Model::infer(const MultispectralTile& tile, const BinaryMask* points, double threshold) const {
  require(threshold > 0.0 && threshold < 1.0, "threshold must be in (0,1)");
  nn::Tensor pts;
  if (points) {
    require(points->width() == tile.width() && points->height() == tile.height(),
            "point raster size differs from the tile");
    pts = mask_tensor(*points);
  }
  auto p = predict(tile_tensor(tile), points ? &pts : nullptr);
  const auto d = p.data();
  ProbabilityMask prob(tile.width(), tile.height(), std::vector<double>(d.begin(), d.end()));
  auto mask = prob.threshold(threshold);
  return {std::move(prob), std::move(mask)};
}

// --- checkpoint ---------------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "S2CK1";

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

std::string Model::serialize() const {
  std::ostringstream h;
  std::string blob;
  h << kCheckpointMagic << "\n";
  h << "kind " << to_string(kind_) << "\n";
  h << "points " << (uses_points_ ? 1 : 0) << "\n";
  h << "stage1 " << stage1_.spec().describe() << "\n";
  if (stage2_) h << "stage2 " << stage2_->spec().describe() << "\n";
  h << "seed " << config.seed << "\n";
  h << "step " << steps << "\n";
  h << "config " << config.describe() << "\n";
  for (const auto& e : history)
    h << "history " << e.stage << " " << e.epoch << " " << format_double(e.loss) << " "
      << format_double(e.val_accuracy) << " " << format_double(e.val_miou) << "\n";
  std::size_t offset = 0;
  auto table = [&](const std::string& prefix, const nn::ParamStore& store) {
    for (const auto& [name, e] : store.entries()) {
      const auto& s = e.value.shape();
      h << "param " << prefix << "." << name << " " << offset << " " << s.n << " " << s.c << " " << s.h << " " << s.w
        << "\n";
      offset += e.value.size();
      for (double v : e.value.data()) put_f64(blob, v);
    }
  };
  table("stage1", stage1_.params());
  if (stage2_) table("stage2", stage2_->params());
  h << "end\n";
  return h.str() + blob;
}

Model Model::deserialize(const std::string& bytes, const std::string& where) {
  const auto end_pos = bytes.find("\nend\n");
  if (bytes.rfind(std::string(kCheckpointMagic) + "\n", 0) != 0 || end_pos == std::string::npos)
    fail(ErrorKind::format, where + ": not a checkpoint file");
  const std::string header = bytes.substr(0, end_pos + 1);
  const auto* blob = reinterpret_cast<const unsigned char*>(bytes.data()) + end_pos + 5;
  const std::size_t blob_len = bytes.size() - (end_pos + 5);

  std::string kind = "unet";
  bool points = false;
  std::optional<ArchSpec> s1, s2;
  Model m;
  struct Slot {
    std::string name;
    std::size_t offset;
    nn::Shape shape;
  };
  std::vector<Slot> slots;
  std::istringstream in(header);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "kind") kind = rest;
    else if (key == "points") points = rest == "1";
    else if (key == "stage1") s1 = ArchSpec::parse(rest);
    else if (key == "stage2") s2 = ArchSpec::parse(rest);
    else if (key == "seed") m.config.seed = parse_uint(rest, where);
    else if (key == "step") m.steps = parse_uint(rest, where);
    else if (key == "config") {
      auto& c = m.config;
      for (const auto& w : split_ws(rest)) {
        auto [k, v] = split_kv(w, where);
        if (k == "labels") c.labels = parse_label_kind(v);
        else if (k == "points") {
          c.use_points = v != "none";
          c.points_tag = c.use_points ? v : "";
        } else if (k == "epochs") c.epochs = parse_int(v, where);
        else if (k == "stage2_epochs") c.stage2_epochs = parse_int(v, where);
        else if (k == "batch") c.batch_size = parse_int(v, where);
        else if (k == "lr") c.learning_rate = parse_double(v, where);
        else if (k == "lr_schedule") c.lr_schedule = parse_lr_schedule(v);
        else if (k == "optimizer") c.optimizer = nn::parse_optim_kind(v);
        else if (k == "weight_pos") c.weight_pos = parse_double(v, where);
        else if (k == "seed") c.seed = parse_uint(v, where);
        else if (k == "schedule") c.schedule = parse_schedule(v);
        else if (k == "levels") c.levels = parse_int(v, where);
        else if (k == "base") c.base_channels = parse_int(v, where);
        else if (k == "point_sigma") c.point_sigma = parse_double(v, where);
      }
    } else if (key == "history") {
      auto w = split_ws(rest);
      if (w.size() != 5) fail(ErrorKind::format, where + ": malformed history line");
      m.history.push_back({parse_int(w[0], where), parse_int(w[1], where), parse_double(w[2], where),
                           parse_double(w[3], where), parse_double(w[4], where)});
    } else if (key == "param") {
      auto w = split_ws(rest);
      if (w.size() != 6) fail(ErrorKind::format, where + ": malformed param line");
      slots.push_back({w[0], static_cast<std::size_t>(parse_uint(w[1], where)),
                       {parse_int(w[2], where), parse_int(w[3], where), parse_int(w[4], where), parse_int(w[5], where)}});
    } else {
      fail(ErrorKind::format, where + ": unknown checkpoint field '" + key + "'");
    }
  }
  if (!s1) fail(ErrorKind::format, where + ": missing stage1 architecture");
  try {
    if (kind == "refiner") {
      if (!s2) fail(ErrorKind::format, where + ": refiner checkpoint without stage2");
      auto cfg = m.config;
      auto hist = std::move(m.history);
      auto steps = m.steps;
      m = refiner(*s1, *s2, points, 0);
      m.config = cfg;
      m.history = std::move(hist);
      m.steps = steps;
    } else {
      auto cfg = m.config;
      auto hist = std::move(m.history);
      auto steps = m.steps;
      m = unet(*s1, 0);
      m.config = cfg;
      m.history = std::move(hist);
      m.steps = steps;
    }
  } catch (const Error& e) {
    fail(ErrorKind::format, where + ": " + e.what());
  }

  std::size_t expected_slots = m.stage1_.params().entries().size() + (m.stage2_ ? m.stage2_->params().entries().size() : 0);
  if (slots.size() != expected_slots) fail(ErrorKind::format, where + ": parameter table does not match architecture");
  for (const auto& s : slots) {
    const auto dot = s.name.find('.');
    const std::string stage = s.name.substr(0, dot);
    const std::string name = s.name.substr(dot + 1);
    nn::ParamStore* store = stage == "stage1" ? &m.stage1_.params() : (m.stage2_ && stage == "stage2" ? &m.stage2_->params() : nullptr);
    if (!store || !store->contains(name)) fail(ErrorKind::format, where + ": unexpected parameter " + s.name);
    auto& t = store->value(name);
    if (!(t.shape() == s.shape)) fail(ErrorKind::format, where + ": shape mismatch for " + s.name);
    if ((s.offset + t.size()) * 8 > blob_len) fail(ErrorKind::format, where + ": truncated parameter blob");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f64(blob + (s.offset + i) * 8);
    nn::check_finite(t, "checkpoint load");
  }
  return m;
}

void Model::save(const std::filesystem::path& path) const { write_text_file(path, serialize()); }

Model Model::load(const std::filesystem::path& path) { return deserialize(read_text_file(path), path.string()); }

// --- stage cache ---------------------------------------------------------------

std::optional<std::pair<UNet, std::vector<EpochMetrics>>> StageCache::find(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void StageCache::store(const std::string& key, const UNet& net, const std::vector<EpochMetrics>& history) {
  std::lock_guard lock(mu_);
  entries_.emplace(key, std::pair{net, history});
}

// --- training ------------------------------------------------------------------

namespace {

struct Split {
  std::vector<nn::Tensor> images;
  std::vector<nn::Tensor> labels;  // training target (train) or fine truth (val)
  std::vector<nn::Tensor> points;  // empty when unused
  std::vector<BinaryMask> fine;
};

Split load_split(const DatasetManifest& m, const std::string& which, LabelKind labels, const std::string& tag,
                 double point_sigma) {
  Split s;
  for (const auto* r : m.split(which)) {
    s.images.push_back(tile_tensor(read_multispectral(m.resolve(r->imagery))));
    auto fine = read_mask(m.resolve(r->fine));
    s.labels.push_back(mask_tensor(labels == LabelKind::fine ? fine : read_mask(m.resolve(r->coarse))));
    if (!tag.empty()) {
      auto path = r->points_for(tag);
      if (!path) fail(ErrorKind::usage, "tile " + r->tile_id + " has no point raster for scenario " + tag);
      s.points.push_back(encode_points(mask_tensor(read_mask(m.resolve(*path))), point_sigma));
    }
    s.fine.push_back(std::move(fine));
  }
  return s;
}

nn::Tensor stack(const std::vector<nn::Tensor>& items, const std::vector<std::size_t>& idx) {
  auto shape = items[idx.front()].shape();
  const std::size_t per = shape.size();
  shape.n = static_cast<int>(idx.size());
  std::vector<double> data(per * idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(items[idx[k]].data().data(), per, data.data() + k * per);
  return nn::Tensor(shape, std::move(data));
}

std::pair<double, double> score(const std::vector<nn::Tensor>& probs, const std::vector<BinaryMask>& truth) {
  if (probs.empty()) return {0.0, 0.0};
  Confusion c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto d = probs[i].data();
    ProbabilityMask p(truth[i].width(), truth[i].height(), std::vector<double>(d.begin(), d.end()));
    c += confusion(p.threshold(0.5), truth[i]);
  }
  return {pixel_accuracy(c), mean_iou(c)};
}

// Probabilities for each input; with base logits, the net's output is a
// correction added to them before the sigmoid.
std::vector<nn::Tensor> predict_all(const UNet& net, const std::vector<nn::Tensor>& inputs,
                                    const std::vector<nn::Tensor>* base = nullptr) {
  std::vector<nn::Tensor> out;
  out.reserve(inputs.size());
  auto& n = const_cast<UNet&>(net);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    nn::Tape t(false);
    const auto x = t.input(inputs[i]);
    out.push_back(t.value(base ? refine_var(t, n, x, t.input((*base)[i])) : n.forward(t, x)));
  }
  return out;
}

std::vector<nn::Tensor> logits_all(const UNet& net, const std::vector<nn::Tensor>& inputs) {
  std::vector<nn::Tensor> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(net.predict_logits(x));
  return out;
}

std::vector<nn::Tensor> fuse_all(const Split& s, const std::vector<nn::Tensor>& logits1, bool with_points) {
  std::vector<nn::Tensor> out;
  for (std::size_t i = 0; i < s.images.size(); ++i)
    out.push_back(fuse(s.images[i], sigmoid_of(logits1[i]), with_points ? &s.points[i] : nullptr));
  return out;
}

double lr_at(const TrainConfig& cfg, std::uint64_t step, std::uint64_t total) {
  if (cfg.lr_schedule == LrSchedule::constant || total == 0) return cfg.learning_rate;
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

std::uint64_t batches(std::size_t n, int batch) { return (n + static_cast<std::size_t>(batch) - 1) / batch; }

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
  return idx;
}

// Trains one network on (inputs -> targets); val_inputs are scored against
// fine truth after every epoch.
std::uint64_t train_net(UNet& net, const std::vector<nn::Tensor>& inputs, const std::vector<nn::Tensor>& targets,
                        const std::vector<nn::Tensor>& val_inputs, const std::vector<BinaryMask>& val_truth,
                        const TrainConfig& cfg, int epochs, int stage, std::vector<EpochMetrics>& history,
                        const TrainHooks& hooks, const std::vector<nn::Tensor>* base = nullptr,
                        const std::vector<nn::Tensor>* val_base = nullptr) {
  nn::OptimState opt;
  opt.kind = cfg.optimizer;
  opt.learning_rate = cfg.learning_rate;
  if (cfg.optimizer == nn::OptimKind::sgd_momentum) opt.momentum = 0.9;
  auto rng = make_rng(cfg.seed, Stream::shuffle, static_cast<std::uint64_t>(stage));
  std::uint64_t steps = 0;
  const std::uint64_t total = static_cast<std::uint64_t>(epochs) * batches(inputs.size(), cfg.batch_size);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const auto order = shuffled(inputs.size(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch_size)));
      nn::Tape tape;
      const auto x = tape.input(stack(inputs, idx));
      auto p = base ? refine_var(tape, net, x, tape.input(stack(*base, idx))) : net.forward(tape, x);
      auto loss = nn::bce_loss(tape, p, stack(targets, idx), cfg.weight_pos);
      const double l = tape.value(loss)[0];
      if (!std::isfinite(l)) fail(ErrorKind::numeric, "non-finite training loss at stage " + std::to_string(stage));
      tape.backward(loss);
      opt.learning_rate = lr_at(cfg, steps, total);
      nn::optim_step(net.params(), opt);
      ++steps;
      loss_sum += l * static_cast<double>(idx.size());
    }
    EpochMetrics em;
    em.stage = stage;
    em.epoch = epoch;
    em.loss = loss_sum / static_cast<double>(inputs.size());
    std::tie(em.val_accuracy, em.val_miou) = score(predict_all(net, val_inputs, val_base), val_truth);
    history.push_back(em);
    if (hooks.on_epoch) hooks.on_epoch(em);
  }
  return steps;
}

std::uint64_t train_joint(Model& m, const Split& train, const Split& val, const TrainConfig& cfg, bool with_points,
                          std::vector<EpochMetrics>& history, const TrainHooks& hooks) {
  nn::OptimState o1, o2;
  o1.kind = o2.kind = cfg.optimizer;
  o1.learning_rate = o2.learning_rate = cfg.learning_rate;
  auto rng = make_rng(cfg.seed, Stream::shuffle, 3);
  std::uint64_t steps = 0;
  const std::uint64_t total = static_cast<std::uint64_t>(cfg.epochs) * batches(train.images.size(), cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled(train.images.size(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch_size)));
      const auto target = stack(train.labels, idx);
      nn::Tape tape;
      auto x = tape.input(stack(train.images, idx));
      auto z1 = m.stage1().forward_logits(tape, x);
      auto p1 = nn::sigmoid(tape, z1);
      auto fused = nn::concat_channels(tape, x, p1);
      if (with_points) fused = nn::concat_channels(tape, fused, tape.input(stack(train.points, idx)));
      auto p2 = refine_var(tape, *m.stage2(), fused, z1);
      auto loss = nn::add(tape, nn::bce_loss(tape, p1, target, cfg.weight_pos), nn::bce_loss(tape, p2, target, cfg.weight_pos));
      const double l = tape.value(loss)[0];
      if (!std::isfinite(l)) fail(ErrorKind::numeric, "non-finite training loss (joint schedule)");
      tape.backward(loss);
      o1.learning_rate = o2.learning_rate = lr_at(cfg, steps, total);
      nn::optim_step(m.stage1().params(), o1);
      nn::optim_step(m.stage2()->params(), o2);
      ++steps;
      loss_sum += l * static_cast<double>(idx.size());
    }
    EpochMetrics em;
    em.stage = 2;
    em.epoch = epoch;
    em.loss = loss_sum / static_cast<double>(train.images.size());
    std::vector<nn::Tensor> probs;
    for (std::size_t i = 0; i < val.images.size(); ++i)
      probs.push_back(refine(*m.stage2(), val.images[i], m.stage1().predict_logits(val.images[i]),
                             with_points ? &val.points[i] : nullptr));
    std::tie(em.val_accuracy, em.val_miou) = score(probs, val.fine);
    history.push_back(em);
    if (hooks.on_epoch) hooks.on_epoch(em);
  }
  return steps;
}

}  // namespace

Model train(const DatasetManifest& manifest, ModelKind kind, const TrainConfig& cfg_in, const TrainHooks& hooks) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  const bool with_points = kind == ModelKind::refiner && cfg.use_points;
  if (kind == ModelKind::unet) {
    cfg.use_points = false;
    cfg.points_tag.clear();
  }
  if (with_points) cfg.points_tag = manifest.resolve_tag(cfg.points_tag);
  require(!manifest.split("train").empty(), "manifest has no training tiles");

  const Split train_set = load_split(manifest, "train", cfg.labels, with_points ? cfg.points_tag : "", cfg.point_sigma);
  const Split val_set = load_split(manifest, "test", LabelKind::fine, with_points ? cfg.points_tag : "", cfg.point_sigma);
  const int channels = train_set.images.front().shape().c;

  ArchSpec a1{cfg.levels, cfg.base_channels, channels, 3};
  Model m = kind == ModelKind::unet
                ? Model::unet(a1, cfg.seed)
                : Model::refiner(a1, ArchSpec{cfg.levels, cfg.base_channels, channels + 1 + (with_points ? 1 : 0), 3},
                                 with_points, cfg.seed);
  m.config = cfg;

  if (kind == ModelKind::refiner && cfg.schedule == Schedule::joint) {
    m.steps = train_joint(m, train_set, val_set, cfg, with_points, m.history, hooks);
    return m;
  }

  // Stage 1 (or the whole UNet): imagery -> labels. Identical for every model
  // sharing data, labels, seed and optimisation settings.
  const std::string key = manifest.root.string() + "|" + std::to_string(manifest.tiles.size()) + "|" +
                          to_string(cfg.labels) + "|" + a1.describe() + "|" + std::to_string(cfg.seed) + "|" +
                          std::to_string(cfg.epochs) + "|" + std::to_string(cfg.batch_size) + "|" +
                          format_double(cfg.learning_rate) + "|" + to_string(cfg.lr_schedule) + "|" + nn::to_string(cfg.optimizer) + "|" +
                          format_double(cfg.weight_pos);
  std::uint64_t stage1_steps = 0;
  if (auto hit = hooks.cache ? hooks.cache->find(key) : std::nullopt) {
    m.stage1() = hit->first;
    m.history = hit->second;
  } else {
    stage1_steps = train_net(m.stage1(), train_set.images, train_set.labels, val_set.images, val_set.fine, cfg,
                             cfg.epochs, 1, m.history, hooks);
    if (hooks.cache) hooks.cache->store(key, m.stage1(), m.history);
  }
  m.steps = static_cast<std::uint64_t>(cfg.epochs) * batches(train_set.images.size(), cfg.batch_size);
  (void)stage1_steps;
  if (kind == ModelKind::unet) return m;

  // Stage 2: frozen stage-1 output fused with imagery (and points).
  const auto train_z = logits_all(m.stage1(), train_set.images);
  const auto val_z = logits_all(m.stage1(), val_set.images);
  const auto train_in = fuse_all(train_set, train_z, with_points);
  const auto val_in = fuse_all(val_set, val_z, with_points);
  const int epochs2 = cfg.stage2_epochs < 0 ? cfg.epochs : cfg.stage2_epochs;
  m.steps += train_net(*m.stage2(), train_in, train_set.labels, val_in, val_set.fine, cfg, epochs2, 2, m.history, hooks,
                       &train_z, &val_z);
  return m;
}

}  // namespace s2c::model
