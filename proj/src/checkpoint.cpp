#include "envae/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "envae/error.hpp"

namespace envae {

namespace {

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

void write_values(std::ostream& os, const char* tag, const std::vector<double>& values) {
  os << tag;
  for (double v : values) os << ' ' << hex(v);
  os << '\n';
}

void write_mlp(std::ostream& os, const char* role, std::size_t index, const Mlp& mlp) {
  os << "mlp " << role << ' ' << index << ' ' << mlp.layers().size() << '\n';
  for (const Layer& l : mlp.layers()) {
    os << "layer " << l.in() << ' ' << l.out() << ' '
       << (l.activation == Activation::relu ? "relu" : "linear") << ' ' << hex(l.dropout) << ' '
       << (l.batch_norm ? 1 : 0) << '\n';
    write_values(os, "weight", l.weight.data());
    write_values(os, "bias", l.bias);
    if (l.batch_norm) {
      const auto& bn = *l.batch_norm;
      os << "bn " << hex(bn.momentum) << ' ' << hex(bn.eps) << '\n';
      write_values(os, "gamma", bn.gamma);
      write_values(os, "beta", bn.beta);
      write_values(os, "running_mean", bn.running_mean);
      write_values(os, "running_var", bn.running_var);
    }
  }
}

class Reader {
 public:
  explicit Reader(const std::string& text) : in_(text) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) throw DataError("checkpoint truncated");
    return w;
  }
  void expect(const std::string& tag) {
    const auto w = word();
    if (w != tag) throw DataError("checkpoint: expected '" + tag + "', found '" + w + "'");
  }
  std::size_t count() {
    const auto w = word();
    char* end = nullptr;
    const auto v = std::strtoull(w.c_str(), &end, 10);
    if (end == w.c_str() || *end != '\0') throw DataError("checkpoint: bad integer '" + w + "'");
    return static_cast<std::size_t>(v);
  }
  double number() {
    const auto w = word();
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    if (end == w.c_str() || *end != '\0') throw DataError("checkpoint: bad number '" + w + "'");
    return v;
  }
  std::vector<double> values(const std::string& tag, std::size_t n) {
    expect(tag);
    std::vector<double> v(n);
    for (double& x : v) x = number();
    return v;
  }

 private:
  std::istringstream in_;
};

Mlp read_mlp(Reader& r, const std::string& role, std::size_t index) {
  r.expect("mlp");
  r.expect(role);
  if (r.count() != index) throw DataError("checkpoint: " + role + " out of order");
  const std::size_t n_layers = r.count();
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < n_layers; ++i) {
    r.expect("layer");
    const std::size_t in = r.count();
    const std::size_t out = r.count();
    Layer l;
    const auto act = r.word();
    if (act == "relu") {
      l.activation = Activation::relu;
    } else if (act == "linear") {
      l.activation = Activation::linear;
    } else {
      throw DataError("checkpoint: unknown activation '" + act + "'");
    }
    l.dropout = r.number();
    const bool has_bn = r.count() != 0;
    l.weight = Matrix(out, in, r.values("weight", out * in));
    l.bias = r.values("bias", out);
    if (has_bn) {
      r.expect("bn");
      BatchNorm bn;
      bn.momentum = r.number();
      bn.eps = r.number();
      bn.gamma = r.values("gamma", out);
      bn.beta = r.values("beta", out);
      bn.running_mean = r.values("running_mean", out);
      bn.running_var = r.values("running_var", out);
      l.batch_norm = std::move(bn);
    }
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers));
}

}  // namespace

std::string checkpoint_to_string(const EnVaeModel& model) {
  std::ostringstream os;
  os << "envae-checkpoint 1\n";
  os << "features " << model.features() << '\n';
  os << "groups " << model.groups() << '\n';
  os << "latent_dim " << model.latent_dim << '\n';
  os << "beta " << hex(model.beta) << '\n';
  os << "include_prior " << (model.include_prior ? 1 : 0) << '\n';
  os << "elbo_mode " << to_string(model.elbo_mode) << '\n';
  os << "mixture_samples " << model.mixture_samples << '\n';
  os << "grouping_seed " << model.grouping.seed << '\n';
  os << "assignment";
  for (auto a : model.grouping.assignment) os << ' ' << a;
  os << '\n';
  for (std::size_t g = 0; g < model.groups(); ++g) write_mlp(os, "encoder", g, model.encoders[g]);
  for (std::size_t g = 0; g < model.groups(); ++g) write_mlp(os, "decoder", g, model.decoders[g]);
  os << "head " << (model.head ? 1 : 0) << '\n';
  if (model.head) write_mlp(os, "head", 0, *model.head);
  os << "end\n";
  return os.str();
}

EnVaeModel checkpoint_from_string(const std::string& text) {
  Reader r(text);
  r.expect("envae-checkpoint");
  if (r.count() != 1) throw DataError("unsupported checkpoint version");
  EnVaeModel model;
  r.expect("features");
  const std::size_t features = r.count();
  r.expect("groups");
  const std::size_t groups = r.count();
  r.expect("latent_dim");
  model.latent_dim = r.count();
  r.expect("beta");
  model.beta = r.number();
  r.expect("include_prior");
  model.include_prior = r.count() != 0;
  r.expect("elbo_mode");
  model.elbo_mode = parse_elbo_mode(r.word());
  r.expect("mixture_samples");
  model.mixture_samples = r.count();
  r.expect("grouping_seed");
  const std::uint64_t seed = std::strtoull(r.word().c_str(), nullptr, 10);
  r.expect("assignment");
  std::vector<std::size_t> assignment(features);
  for (auto& a : assignment) a = r.count();
  model.grouping = FeatureGrouping::from_assignment(std::move(assignment), groups, seed);
  for (std::size_t g = 0; g < groups; ++g) model.encoders.push_back(read_mlp(r, "encoder", g));
  for (std::size_t g = 0; g < groups; ++g) model.decoders.push_back(read_mlp(r, "decoder", g));
  r.expect("head");
  if (r.count() != 0) model.head = read_mlp(r, "head", 0);
  r.expect("end");
  model.validate();
  return model;
}

void save_checkpoint(const EnVaeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_to_string(model);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

EnVaeModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace envae
