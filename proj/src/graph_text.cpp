#include <sstream>

#include "zkinfer/graph.hpp"

namespace zkinfer {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

Shape parse_dims(const std::string& s, int line_no) {
  if (s == "scalar") return {};
  Shape out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find('x', start);
    if (end == std::string::npos) end = s.size();
    try {
      std::size_t used = 0;
      const std::string part = s.substr(start, end - start);
      const long long v = std::stoll(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception&) {
      throw GraphError("line " + std::to_string(line_no) + ": bad dimensions '" + s + "'");
    }
    start = end + 1;
  }
  return out;
}

void parse_kv(const std::string& tok, Attrs& attrs, int line_no) {
  const auto eq = tok.find('=');
  if (eq == 0) throw GraphError("line " + std::to_string(line_no) + ": bad attribute '" + tok + "'");
  if (eq == std::string::npos)
    attrs[tok] = "";
  else
    attrs[tok.substr(0, eq)] = tok.substr(eq + 1);
}

std::string dims_text(const Shape& s) { return shape_to_string(s); }

}  // namespace

Graph parse_graph(std::string_view text) {
  Graph g;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    auto fail = [&](const std::string& what) -> GraphError {
      return GraphError("line " + std::to_string(line_no) + ": " + what);
    };
    if (!header) {
      if (tok.size() != 2 || tok[0] != "zkgraph") throw fail("expected header 'zkgraph 1'");
      if (tok[1] != "1") throw fail("unsupported graph format version " + tok[1]);
      header = true;
      continue;
    }
    const std::string& kw = tok[0];
    if (kw == "input") {
      if (tok.size() < 4) throw fail("input needs: id kind dims");
      if (tok[2] != "tokens" && tok[2] != "real") throw fail("input kind must be tokens or real");
      Node& n = g.add_input(tok[1], parse_dims(tok[3], line_no), tok[2] == "tokens", 0);
      for (std::size_t i = 4; i < tok.size(); ++i) parse_kv(tok[i], n.attrs, line_no);
      if (tok[2] == "real") n.attrs.erase("vocab");
    } else if (kw == "const") {
      if (tok.size() < 3) throw fail("const needs: id dims");
      Attrs attrs;
      for (std::size_t i = 3; i < tok.size(); ++i) parse_kv(tok[i], attrs, line_no);
      g.add_const(tok[1], parse_dims(tok[2], line_no), std::move(attrs));
    } else if (kw == "node") {
      if (tok.size() < 4) throw fail("node needs: id op attrs inputs...");
      const auto op = parse_op(tok[2]);
      if (!op || *op == OpKind::Input || *op == OpKind::Const) throw GraphError("unsupported op: " + tok[2]);
      Attrs attrs;
      if (tok[3] != "-") {
        std::size_t start = 0;
        const std::string& s = tok[3];
        while (start <= s.size()) {
          std::size_t end = s.find(';', start);
          if (end == std::string::npos) end = s.size();
          if (end > start) parse_kv(s.substr(start, end - start), attrs, line_no);
          start = end + 1;
        }
      }
      g.add_node(tok[1], *op, std::vector<std::string>(tok.begin() + 4, tok.end()), std::move(attrs));
    } else if (kw == "output") {
      if (tok.size() != 2) throw fail("output needs exactly one id");
      g.add_output(tok[1]);
    } else {
      throw fail("unknown directive '" + kw + "'");
    }
  }
  if (!header) throw GraphError("missing header 'zkgraph 1'");
  g.finalize();
  return g;
}

std::string write_graph(const Graph& g) {
  std::ostringstream out;
  out << "zkgraph 1\n";
  for (const auto& n : g.nodes()) {
    switch (n.op) {
      case OpKind::Input:
        out << "input " << n.id << ' ' << n.attr("kind", "real") << ' ' << dims_text(n.shape);
        for (const auto& [k, v] : n.attrs)
          if (k != "kind") out << ' ' << k << '=' << v;
        break;
      case OpKind::Const:
        out << "const " << n.id << ' ' << dims_text(n.shape);
        for (const auto& [k, v] : n.attrs) {
          out << ' ' << k;
          if (!v.empty()) out << '=' << v;
        }
        break;
      default: {
        out << "node " << n.id << ' ' << op_name(n.op) << ' ';
        if (n.attrs.empty()) {
          out << '-';
        } else {
          bool first = true;
          for (const auto& [k, v] : n.attrs) {
            if (!first) out << ';';
            first = false;
            out << k;
            if (!v.empty()) out << '=' << v;
          }
        }
        for (const auto& in : n.inputs) out << ' ' << in;
      }
    }
    out << '\n';
  }
  for (const auto& o : g.outputs()) out << "output " << o << '\n';
  return out.str();
}

}  // namespace zkinfer
