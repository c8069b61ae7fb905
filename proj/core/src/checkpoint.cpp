#include "datta/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace datta::harness {

namespace {

constexpr const char* kMagic = "DATTA-CKPT v1";

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void write_le_floats(std::ostream& os, const Tensor& t) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    const float v = t[i];
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    const unsigned char b[4] = {
        static_cast<unsigned char>(bits & 0xff),
        static_cast<unsigned char>((bits >> 8) & 0xff),
        static_cast<unsigned char>((bits >> 16) & 0xff),
        static_cast<unsigned char>((bits >> 24) & 0xff),
    };
    os.write(reinterpret_cast<const char*>(b), 4);
  }
}

void read_le_floats(std::istream& is, Tensor& t) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) fail("checkpoint: truncated parameter blob");
    const uint32_t bits = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                          (static_cast<uint32_t>(b[2]) << 16) |
                          (static_cast<uint32_t>(b[3]) << 24);
    float v;
    std::memcpy(&v, &bits, sizeof(v));
    t[i] = v;
  }
}

// Named parameters in manifest order.
std::vector<std::pair<std::string, Tensor*>> manifest_params(adapt::Model& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (size_t i = 0; i < m.conv_kernels().size(); ++i) {
    const std::string idx = std::to_string(i);
    out.emplace_back("conv" + idx + ".kernel", &m.conv_kernels()[i]);
    out.emplace_back("bn" + idx + ".gamma", &m.sites()[i].state.gamma);
    out.emplace_back("bn" + idx + ".beta", &m.sites()[i].state.beta);
    out.emplace_back("bn" + idx + ".mu_source", &m.sites()[i].state.mu_source);
    out.emplace_back("bn" + idx + ".var_source", &m.sites()[i].state.var_source);
  }
  out.emplace_back("head.weight", &m.head_weight());
  out.emplace_back("head.bias", &m.head_bias());
  return out;
}

}  // namespace

void save_checkpoint(const adapt::Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("checkpoint: cannot open '" + path + "' for writing");

  const adapt::ModelSpec& spec = model.spec();
  os << kMagic << "\n";
  os << "in_channels " << spec.in_channels << "\n";
  os << "image_h " << spec.image_h << "\n";
  os << "image_w " << spec.image_w << "\n";
  os << "num_classes " << spec.num_classes << "\n";
  for (const adapt::ConvSpec& c : spec.convs) {
    os << "conv " << c.out_channels << " " << c.kernel << " " << c.stride << "\n";
  }

  auto& mutable_model = const_cast<adapt::Model&>(model);
  auto params = manifest_params(mutable_model);
  int64_t total = 0;
  for (auto& [name, t] : params) {
    os << "param " << name;
    for (int64_t d : t->shape()) os << " " << d;
    os << "\n";
    total += t->numel();
  }
  os << "BLOB " << total << "\n";
  for (auto& [name, t] : params) write_le_floats(os, *t);
  if (!os) fail("checkpoint: write failed for '" + path + "'");
}

adapt::Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("checkpoint: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(is, line) || line != kMagic) {
    fail("checkpoint: bad magic/version in '" + path + "' (expected '" + kMagic + "')");
  }

  adapt::ModelSpec spec;
  spec.convs.clear();
  std::vector<std::pair<std::string, std::vector<int64_t>>> param_shapes;
  int64_t blob_count = -1;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "in_channels") ls >> spec.in_channels;
    else if (tag == "image_h") ls >> spec.image_h;
    else if (tag == "image_w") ls >> spec.image_w;
    else if (tag == "num_classes") ls >> spec.num_classes;
    else if (tag == "conv") {
      adapt::ConvSpec c;
      ls >> c.out_channels >> c.kernel >> c.stride;
      spec.convs.push_back(c);
    } else if (tag == "param") {
      std::string name;
      ls >> name;
      if (name.empty()) fail("checkpoint: malformed manifest line '" + line + "'");
      std::vector<int64_t> shape;
      int64_t d;
      while (ls >> d) shape.push_back(d);
      param_shapes.emplace_back(name, shape);
      continue;  // the dim loop leaves the stream in a failed state by design
    } else if (tag == "BLOB") {
      ls >> blob_count;
      break;
    } else {
      fail("checkpoint: unknown manifest line '" + line + "'");
    }
    if (ls.fail()) fail("checkpoint: malformed manifest line '" + line + "'");
  }
  if (blob_count < 0) fail("checkpoint: missing BLOB marker");

  adapt::Model model(spec, /*seed=*/0);
  auto params = manifest_params(model);
  if (params.size() != param_shapes.size()) {
    fail("checkpoint: manifest lists " + std::to_string(param_shapes.size()) +
         " parameters, model has " + std::to_string(params.size()));
  }
  int64_t total = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != param_shapes[i].first ||
        params[i].second->shape() != param_shapes[i].second) {
      fail("checkpoint: parameter mismatch at '" + param_shapes[i].first + "'");
    }
    total += params[i].second->numel();
  }
  if (total != blob_count) fail("checkpoint: blob count mismatch");
  for (auto& [name, t] : params) read_le_floats(is, *t);
  return model;
}

}  // namespace datta::harness
