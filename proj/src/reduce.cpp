#include <cstdio>
#include <unordered_map>

#include "zkinfer/graph.hpp"

namespace zkinfer {

namespace {

std::string real_text(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string letters(std::size_t n) {
  if (n > 24) throw GraphError("tensor rank too large for einsum lowering");
  return std::string("abcdefghijklmnopqrstuvwx").substr(0, n);
}

std::string with_unit_axis(Shape s) {
  s.push_back(1);
  return shape_to_string(s);
}

class Lowering {
 public:
  explicit Lowering(const Graph& src) : src_(src) {}

  Graph run() {
    for (const auto& n : src_.nodes()) lower(n);
    for (const auto& o : src_.outputs()) out_.add_output(name(o));
    out_.finalize();
    return std::move(out_);
  }

 private:
  std::string name(const std::string& id) const {
    auto it = rename_.find(id);
    return it == rename_.end() ? id : it->second;
  }

  void lower(const Node& n) {
    std::vector<std::string> in;
    for (const auto& i : n.inputs) in.push_back(name(i));
    switch (n.op) {
      case OpKind::Dropout:
        rename_[n.id] = in[0];
        return;
      case OpKind::MatMul:
        matmul(n, in);
        return;
      case OpKind::Softmax:
        softmax(n, in);
        return;
      case OpKind::LayerNorm:
        layer_norm(n, in);
        return;
      default: {
        Node copy = n;
        copy.inputs = std::move(in);
        out_.append(std::move(copy));
      }
    }
  }

  void matmul(const Node& n, const std::vector<std::string>& in) {
    const std::size_t ra = src_.node(n.inputs[0]).shape.size();
    const std::string batch = letters(ra - 1);
    const std::string spec = batch + "z," + "zy->" + batch + "y";
    out_.add_node(n.id, OpKind::Einsum, in, {{"spec", spec}});
  }

  // exp -> row sum -> reciprocal -> broadcast multiply -> rescale, with an
  // optional causal mask in front.
  void softmax(const Node& n, const std::vector<std::string>& in) {
    const Shape& s = n.shape;
    const std::string& id = n.id;
    std::string x = in[0];
    if (n.attr_int("causal", 0)) {
      out_.add_node(id + "/mask", OpKind::MaskFill, {x});
      x = id + "/mask";
    }
    const std::string all = letters(s.size());
    const std::string rows = all.substr(0, s.size() - 1);
    Shape row_shape(s.begin(), s.end() - 1);
    out_.add_node(id + "/exp", OpKind::Nonlinear, {x}, {{"fn", "exp"}});
    out_.add_node(id + "/sum", OpKind::Einsum, {id + "/exp"}, {{"spec", all + "->" + rows}});
    out_.add_node(id + "/recip", OpKind::Nonlinear, {id + "/sum"}, {{"fn", "recip"}});
    out_.add_node(id + "/recip_col", OpKind::Reshape, {id + "/recip"}, {{"shape", with_unit_axis(row_shape)}});
    out_.add_node(id + "/prod", OpKind::Mul, {id + "/exp", id + "/recip_col"});
    out_.add_node(id, OpKind::Rescale, {id + "/prod"});
  }

  // mean, centre, variance, reciprocal square root, normalise, affine.
  void layer_norm(const Node& n, const std::vector<std::string>& in) {
    const Shape& s = n.shape;
    const std::string& id = n.id;
    const std::int64_t c = s.back();
    const std::string all = letters(s.size());
    const std::string rows = all.substr(0, s.size() - 1);
    const std::string chan = all.substr(s.size() - 1);
    Shape row_shape(s.begin(), s.end() - 1);
    const std::string mean_spec = all + "," + chan + "->" + rows;

    out_.add_const(id + "/meancoef", {c}, {{"fill", real_text(1.0 / static_cast<double>(c))}, {"scale", "1"}});
    out_.add_node(id + "/mean2", OpKind::Einsum, {in[0], id + "/meancoef"}, {{"spec", mean_spec}});
    out_.add_node(id + "/mean", OpKind::Rescale, {id + "/mean2"});
    out_.add_node(id + "/mean_col", OpKind::Reshape, {id + "/mean"}, {{"shape", with_unit_axis(row_shape)}});
    out_.add_node(id + "/centered", OpKind::Sub, {in[0], id + "/mean_col"});
    out_.add_node(id + "/sq", OpKind::Mul, {id + "/centered", id + "/centered"});
    out_.add_node(id + "/var3", OpKind::Einsum, {id + "/sq", id + "/meancoef"}, {{"spec", mean_spec}});
    out_.add_node(id + "/var", OpKind::Rescale, {id + "/var3"});
    out_.add_const(id + "/eps", {}, {{"fill", real_text(n.attr_real("eps", 1e-5))}, {"scale", "2"}});
    out_.add_node(id + "/var_eps", OpKind::Add, {id + "/var", id + "/eps"});
    out_.add_node(id + "/rsqrt", OpKind::Nonlinear, {id + "/var_eps"}, {{"fn", "rsqrt"}});
    out_.add_node(id + "/rsqrt_col", OpKind::Reshape, {id + "/rsqrt"}, {{"shape", with_unit_axis(row_shape)}});
    out_.add_node(id + "/norm2", OpKind::Mul, {id + "/centered", id + "/rsqrt_col"});
    out_.add_node(id + "/norm", OpKind::Rescale, {id + "/norm2"});
    out_.add_node(id + "/scaled2", OpKind::Mul, {id + "/norm", in[1]});
    out_.add_node(id + "/scaled", OpKind::Rescale, {id + "/scaled2"});
    out_.add_node(id, OpKind::Add, {id + "/scaled", in[2]});
  }

  const Graph& src_;
  Graph out_;
  std::unordered_map<std::string, std::string> rename_;
};

}  // namespace

Graph reduce(const Graph& g) { return Lowering(g).run(); }

}  // namespace zkinfer
