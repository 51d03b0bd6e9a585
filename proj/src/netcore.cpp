#include "vmap/netcore.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace vmap {

using ad::Tape;
using ad::Var;

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["preset"] = c.preset;
  j["neck"] = c.neck;
  j["embed_dim"] = c.embed_dim;
  j["decoder_layers"] = c.decoder_layers;
  j["num_queries"] = c.num_queries;
  j["points_per_element"] = c.points_per_element;
  j["bev_grid"] = c.bev_grid;
  j["fusion_kernel"] = c.fusion_kernel;
  j["image_size"] = c.image_size;
  j["single_view"] = c.single_view;
  j["param_seed"] = c.param_seed;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig c;
  c.preset = j.value("preset", c.preset);
  c.neck = j.value("neck", c.neck);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.num_queries = j.value("num_queries", c.num_queries);
  c.points_per_element = j.value("points_per_element", c.points_per_element);
  c.bev_grid = j.value("bev_grid", c.bev_grid);
  c.fusion_kernel = j.value("fusion_kernel", c.fusion_kernel);
  c.image_size = j.value("image_size", c.image_size);
  c.single_view = j.value("single_view", c.single_view);
  c.param_seed = j.value("param_seed", c.param_seed);
  return c;
}

ad::Parameter& ParamStore::create(const std::string& name, std::vector<int> shape) {
  if (index_.count(name)) throw std::logic_error("ParamStore: duplicate parameter " + name);
  params_.push_back(std::make_unique<ad::Parameter>(name, std::move(shape)));
  index_[name] = params_.back().get();
  return *params_.back();
}

ad::Parameter& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::logic_error("ParamStore: unknown parameter " + name);
  return *it->second;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) std::fill(p->grad.v.begin(), p->grad.v.end(), 0.0);
}

int64_t ParamStore::total_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

Tensor image_to_tensor(const Image& img) {
  Tensor t({3, img.height, img.width});
  size_t hw = static_cast<size_t>(img.height) * img.width;
  for (size_t k = 0; k < hw; ++k)
    for (int c = 0; c < 3; ++c) t.v[c * hw + k] = img.data[k * 3 + c] / 255.0;
  return t;
}

namespace {

uint64_t name_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

void init_normal(ad::Parameter& p, uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed ^ name_hash(p.name));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : p.value.v) v = dist(rng);
}

// He init for a conv/linear weight with the given fan-in.
void init_he(ad::Parameter& p, uint64_t seed, int fan_in) {
  init_normal(p, seed, std::sqrt(2.0 / fan_in));
}

Var reshape(Tape& tape, const Var& x, std::vector<int> shape) {
  Tensor out(std::move(shape), x->val.v);
  Var px = x;
  return tape.make(std::move(out), [px](ad::Node& n) {
    if (!px->needs_grad) return;
    for (size_t i = 0; i < n.grad.v.size(); ++i) px->grad[i] += n.grad[i];
  });
}

}  // namespace

MapNet::MapNet(const ModelConfig& config) : config_(config) { build(); }

void MapNet::build() {
  const auto ch = config_.backbone_channels();
  const int L = config_.neck_lateral_channels();
  const int d = config_.embed_dim;
  const int g2 = config_.bev_grid * config_.bev_grid;
  const uint64_t seed = config_.param_seed;
  const bool tiny = config_.preset == "tiny";

  auto conv_param = [&](const std::string& name, int co, int ci, int k) {
    init_he(params_.create(name + ".w", {co, ci, k, k}), seed, ci * k * k);
    params_.create(name + ".b", {co});
  };
  auto linear_param = [&](const std::string& name, int din, int dout) {
    init_he(params_.create(name + ".w", {din, dout}), seed, din);
    params_.create(name + ".b", {dout});
  };

  conv_param("b.stem", ch[0], 3, 3);
  conv_param("b.s4", ch[0], ch[0], 3);
  conv_param("b.s8", ch[1], ch[0], 3);
  conv_param("b.s16", ch[2], ch[1], 3);
  if (tiny) {
    conv_param("b.r4", ch[0], ch[0], 3);
    conv_param("b.r8", ch[1], ch[1], 3);
    conv_param("b.r16", ch[2], ch[2], 3);
  }

  conv_param("n.lat0", L, ch[0], 1);
  conv_param("n.lat1", L, ch[1], 1);
  conv_param("n.lat2", L, ch[2], 1);
  if (config_.neck == "panet") {
    conv_param("n.down1", L, L, 3);
    conv_param("n.down2", L, L, 3);
    conv_param("n.merge1", L, 2 * L, 3);
    conv_param("n.merge2", L, 2 * L, 3);
  }

  for (int v = 0; v < 4; ++v) {
    std::string p = "stn" + std::to_string(v);
    conv_param(p + ".c1", 16, 3 * L, 3);
    conv_param(p + ".c2", 16, 16, 3);
    linear_param(p + ".fc1", 16, 32);
    // Identity transform at initialization: zero weights, identity bias.
    params_.create(p + ".fc2.w", {32, 6});
    auto& fb = params_.create(p + ".fc2.b", {6});
    fb.value.v = {1, 0, 0, 0, 1, 0};
  }

  conv_param("fuse.c1", d, 12 * L, config_.fusion_kernel);
  conv_param("fuse.c2", d, d, config_.fusion_kernel);

  init_normal(params_.create("dec.pos", {g2, d}), seed, 0.02);
  init_normal(params_.create("dec.inst", {config_.num_queries, d}), seed, 0.02);
  init_normal(params_.create("dec.pt", {config_.points_per_element, d}), seed, 0.02);
  linear_param("dec.k", d, d);
  linear_param("dec.v", d, d);
  for (int l = 0; l < config_.decoder_layers; ++l) {
    std::string p = "dec.l" + std::to_string(l);
    linear_param(p + ".q", d, d);
    linear_param(p + ".o", d, d);
    linear_param(p + ".f1", d, 2 * d);
    linear_param(p + ".f2", 2 * d, d);
    auto& g1 = params_.create(p + ".ln1.g", {d});
    std::fill(g1.value.v.begin(), g1.value.v.end(), 1.0);
    params_.create(p + ".ln1.b", {d});
    auto& g2p = params_.create(p + ".ln2.g", {d});
    std::fill(g2p.value.v.begin(), g2p.value.v.end(), 1.0);
    params_.create(p + ".ln2.b", {d});
  }
  linear_param("head.cls", d, kNumClasses + 1);
  linear_param("head.pt", d, 2);
}

Var MapNet::conv_block(Tape& tape, const Var& x, const std::string& name, int stride, bool act) {
  auto& w = params_.at(name + ".w");
  auto& b = params_.at(name + ".b");
  int k = w.value.dim(2);
  Var y = ad::conv2d(tape, x, tape.leaf(w), tape.leaf(b), stride, k / 2);
  return act ? ad::silu(tape, y) : y;
}

std::vector<FeatureMap> MapNet::backbone_forward(Tape& tape, const Image& image) {
  if (image.height != config_.image_size || image.width != config_.image_size)
    throw std::invalid_argument("backbone_forward: image shape does not match config");
  const bool tiny = config_.preset == "tiny";
  Var x = tape.constant(image_to_tensor(image));
  Var s2 = conv_block(tape, x, "b.stem", 2);
  Var s4 = conv_block(tape, s2, "b.s4", 2);
  if (tiny) s4 = conv_block(tape, s4, "b.r4", 1);
  Var s8 = conv_block(tape, s4, "b.s8", 2);
  if (tiny) s8 = conv_block(tape, s8, "b.r8", 1);
  Var s16 = conv_block(tape, s8, "b.s16", 2);
  if (tiny) s16 = conv_block(tape, s16, "b.r16", 1);
  return {{s4, 4}, {s8, 8}, {s16, 16}};
}

FeatureMap MapNet::neck_forward(Tape& tape, const std::vector<FeatureMap>& pyramid) {
  if (pyramid.size() != 3) throw std::invalid_argument("neck_forward: need 3 pyramid levels");
  if (!(pyramid[0].stride < pyramid[1].stride && pyramid[1].stride < pyramid[2].stride))
    throw std::invalid_argument("neck_forward: strides must be strictly increasing");
  int h4 = pyramid[0].data->val.dim(1), w4 = pyramid[0].data->val.dim(2);

  Var l0 = conv_block(tape, pyramid[0].data, "n.lat0", 1, false);
  Var l1 = conv_block(tape, pyramid[1].data, "n.lat1", 1, false);
  Var l2 = conv_block(tape, pyramid[2].data, "n.lat2", 1, false);

  // Top-down pathway.
  Var p2 = l2;
  Var p1 = ad::add(tape, l1, ad::bilinear_resize(tape, p2, l1->val.dim(1), l1->val.dim(2)));
  Var p0 = ad::add(tape, l0, ad::bilinear_resize(tape, p1, h4, w4));

  Var o0 = p0, o1 = p1, o2 = p2;
  if (config_.neck == "panet") {
    // Additional bottom-up pathway with feature concatenation.
    Var d1 = conv_block(tape, p0, "n.down1", 2);
    o1 = conv_block(tape, ad::concat_channels(tape, {d1, p1}), "n.merge1", 1);
    Var d2 = conv_block(tape, o1, "n.down2", 2);
    o2 = conv_block(tape, ad::concat_channels(tape, {d2, p2}), "n.merge2", 1);
  }

  // Upsample to uniform resolution and stack.
  Var stacked = ad::concat_channels(
      tape, {o0, ad::bilinear_resize(tape, o1, h4, w4), ad::bilinear_resize(tape, o2, h4, w4)});
  return {stacked, 4};
}

ad::Var MapNet::stn_theta(Tape& tape, const FeatureMap& feature, int view_index) {
  std::string p = "stn" + std::to_string(view_index);
  Var h = conv_block(tape, feature.data, p + ".c1", 2);
  h = conv_block(tape, h, p + ".c2", 2);
  Var pooled = reshape(tape, ad::global_avg_pool(tape, h), {1, 16});
  Var f = ad::silu(tape, ad::linear(tape, pooled, tape.leaf(params_.at(p + ".fc1.w")),
                                    tape.leaf(params_.at(p + ".fc1.b"))));
  Var theta = ad::linear(tape, f, tape.leaf(params_.at(p + ".fc2.w")),
                         tape.leaf(params_.at(p + ".fc2.b")));
  return reshape(tape, theta, {2, 3});
}

FeatureMap MapNet::stn_forward(Tape& tape, const FeatureMap& feature, int view_index) {
  Var theta = stn_theta(tape, feature, view_index);
  return {ad::grid_sample_affine(tape, feature.data, theta), feature.stride};
}

FeatureMap MapNet::fuse_views(Tape& tape, const std::vector<FeatureMap>& warped) {
  if (warped.size() != 4) throw std::invalid_argument("fuse_views: need 4 feature maps");
  for (const auto& f : warped)
    if (!f.data->val.same_shape(warped[0].data->val))
      throw std::invalid_argument("fuse_views: view shapes differ");
  Var cat = ad::concat_channels(tape, {warped[0].data, warped[1].data, warped[2].data, warped[3].data});
  Var f1 = conv_block(tape, cat, "fuse.c1", 2);
  Var f2 = conv_block(tape, f1, "fuse.c2", 1);
  Var bev = ad::bilinear_resize(tape, f2, config_.bev_grid, config_.bev_grid);
  return {bev, 0};
}

ModelOutput MapNet::decode_map(Tape& tape, const FeatureMap& bev) {
  const int d = config_.embed_dim;
  const int m = config_.num_queries;
  const int p = config_.points_per_element;
  if (bev.data->val.dim(1) != config_.bev_grid || bev.data->val.dim(2) != config_.bev_grid)
    throw std::invalid_argument("decode_map: bev grid mismatch");

  Var cells = ad::flatten_cells(tape, bev.data);
  cells = ad::add(tape, cells, tape.leaf(params_.at("dec.pos")));
  Var keys = ad::linear(tape, cells, tape.leaf(params_.at("dec.k.w")), tape.leaf(params_.at("dec.k.b")));
  Var vals = ad::linear(tape, cells, tape.leaf(params_.at("dec.v.w")), tape.leaf(params_.at("dec.v.b")));

  Var q = ad::query_grid(tape, tape.leaf(params_.at("dec.inst")), tape.leaf(params_.at("dec.pt")));

  ModelOutput out;
  for (int l = 0; l < config_.decoder_layers; ++l) {
    std::string pre = "dec.l" + std::to_string(l);
    Var qp = ad::linear(tape, q, tape.leaf(params_.at(pre + ".q.w")), tape.leaf(params_.at(pre + ".q.b")));
    Var scores = ad::scale(tape, ad::matmul_nt(tape, qp, keys), 1.0 / std::sqrt(double(d)));
    Var attn = ad::softmax_rows(tape, scores);
    Var ctx = ad::matmul(tape, attn, vals);
    ctx = ad::linear(tape, ctx, tape.leaf(params_.at(pre + ".o.w")), tape.leaf(params_.at(pre + ".o.b")));
    q = ad::layernorm_rows(tape, ad::add(tape, q, ctx), tape.leaf(params_.at(pre + ".ln1.g")),
                           tape.leaf(params_.at(pre + ".ln1.b")));
    Var ffn = ad::linear(tape, q, tape.leaf(params_.at(pre + ".f1.w")), tape.leaf(params_.at(pre + ".f1.b")));
    ffn = ad::linear(tape, ad::silu(tape, ffn), tape.leaf(params_.at(pre + ".f2.w")),
                     tape.leaf(params_.at(pre + ".f2.b")));
    q = ad::layernorm_rows(tape, ad::add(tape, q, ffn), tape.leaf(params_.at(pre + ".ln2.g")),
                           tape.leaf(params_.at(pre + ".ln2.b")));

    PredictionVars pv;
    Var inst_feat = ad::group_mean_rows(tape, q, m, p);
    pv.logits = ad::linear(tape, inst_feat, tape.leaf(params_.at("head.cls.w")),
                           tape.leaf(params_.at("head.cls.b")));
    pv.points = ad::sigmoid(tape, ad::linear(tape, q, tape.leaf(params_.at("head.pt.w")),
                                             tape.leaf(params_.at("head.pt.b"))));
    out.layers.push_back(std::move(pv));
  }
  return out;
}

ModelOutput MapNet::forward(Tape& tape, const std::vector<const Image*>& views) {
  if (views.size() != 1 && views.size() != 4)
    throw std::invalid_argument("model_forward: expected 1 or 4 views");

  std::vector<FeatureMap> warped;
  for (size_t v = 0; v < views.size(); ++v) {
    auto pyr = backbone_forward(tape, *views[v]);
    FeatureMap neck = neck_forward(tape, pyr);
    warped.push_back(stn_forward(tape, neck, static_cast<int>(v)));
  }
  while (warped.size() < 4) {
    // Single-view mode: absent views are zero-filled.
    warped.push_back({tape.constant(Tensor(warped[0].data->val.shape)), warped[0].stride});
  }
  FeatureMap bev = fuse_views(tape, warped);
  return decode_map(tape, bev);
}

Prediction MapNet::predict(const std::vector<const Image*>& views) {
  Tape tape;
  ModelOutput out = forward(tape, views);
  const PredictionVars& last = out.layers.back();
  Prediction pred;
  pred.class_logits = last.logits->val;
  pred.points = Tensor({config_.num_queries, config_.points_per_element, 2}, last.points->val.v);
  return pred;
}

// ---- checkpoint io ----

namespace {
constexpr char kMagic[8] = {'V', 'M', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
uint64_t read_u64(std::ifstream& f) {
  uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
void write_str(std::ofstream& f, const std::string& s) {
  write_u64(f, s.size());
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_str(std::ifstream& f) {
  uint64_t n = read_u64(f);
  std::string s(n, '\0');
  f.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}
void write_tensor(std::ofstream& f, const Tensor& t) {
  write_u64(f, t.shape.size());
  for (int d : t.shape) write_u64(f, static_cast<uint64_t>(d));
  f.write(reinterpret_cast<const char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * 8));
}
Tensor read_tensor(std::ifstream& f) {
  uint64_t nd = read_u64(f);
  std::vector<int> shape(nd);
  for (auto& d : shape) d = static_cast<int>(read_u64(f));
  Tensor t(shape);
  f.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * 8));
  return t;
}
}  // namespace

void save_checkpoint(const std::string& path, MapNet& net, const TrainState* state) {
  ParamStore& params = net.params();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kMagic, 8);
  write_str(f, model_config_to_json(net.config()));
  write_u64(f, params.all().size());
  for (const auto& p : params.all()) {
    write_str(f, p->name);
    write_tensor(f, p->value);
  }
  uint8_t has_state = state ? 1 : 0;
  f.write(reinterpret_cast<const char*>(&has_state), 1);
  if (state) {
    write_u64(f, static_cast<uint64_t>(state->step));
    f.write(reinterpret_cast<const char*>(&state->best_map), 8);
    for (const auto& p : params.all()) {
      write_tensor(f, p->adam_m);
      write_tensor(f, p->adam_v);
    }
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelConfig peek_checkpoint_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  return model_config_from_json(read_str(f));
}

TrainState load_checkpoint(const std::string& path, MapNet& net) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  ModelConfig stored = model_config_from_json(read_str(f));
  if (!(stored == net.config()))
    throw std::runtime_error("load_checkpoint: config mismatch for " + path);
  uint64_t n = read_u64(f);
  if (n != net.params().all().size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch in " + path);
  for (auto& p : net.params().all()) {
    std::string name = read_str(f);
    if (name != p->name) throw std::runtime_error("load_checkpoint: parameter order mismatch: " + name);
    Tensor t = read_tensor(f);
    if (t.shape != p->value.shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    p->value = std::move(t);
  }
  TrainState state;
  uint8_t has_state = 0;
  f.read(reinterpret_cast<char*>(&has_state), 1);
  if (has_state) {
    state.step = static_cast<int64_t>(read_u64(f));
    f.read(reinterpret_cast<char*>(&state.best_map), 8);
    for (auto& p : net.params().all()) {
      p->adam_m = read_tensor(f);
      p->adam_v = read_tensor(f);
    }
  }
  if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return state;
}

}  // namespace vmap
