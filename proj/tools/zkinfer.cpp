#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "zkinfer/bench.hpp"
#include "zkinfer/protocol.hpp"

using namespace zkinfer;
namespace fs = std::filesystem;

namespace {

struct ModelOpts {
  std::string model, graph, weights, quant;
  std::uint64_t rows = 0;
};

void add_model_opts(CLI::App* app, ModelOpts& o) {
  app->add_option("--model", o.model, "[id=]bundle directory, or the model id with --graph/--weights");
  app->add_option("--graph", o.graph, "graph file");
  app->add_option("--weights", o.weights, "weights file");
  app->add_option("--quant", o.quant, "f,B (default 7,16)");
  app->add_option("--rows", o.rows, "row cap per column group, a power of 2");
}

std::optional<std::uint64_t> row_cap(const ModelOpts& o) {
  return o.rows ? std::optional<std::uint64_t>(o.rows) : std::nullopt;
}

std::pair<std::string, ModelBundle> load_model(const ModelOpts& o) {
  if (!o.graph.empty()) {
    if (o.weights.empty()) throw CLI::ValidationError("--graph needs --weights");
    const QuantConfig q = o.quant.empty() ? QuantConfig{} : QuantConfig::parse(o.quant);
    return {o.model.empty() ? fs::path(o.graph).stem().string() : o.model, ModelBundle::load(o.graph, o.weights, q)};
  }
  if (o.model.empty()) throw CLI::ValidationError("give --model or --graph/--weights");
  std::string id, dir = o.model;
  if (const auto eq = o.model.find('='); eq != std::string::npos) {
    id = o.model.substr(0, eq);
    dir = o.model.substr(eq + 1);
  } else {
    id = fs::path(dir).lexically_normal().filename().string();
    if (id.empty()) id = fs::path(dir).parent_path().filename().string();
  }
  ModelBundle b = ModelBundle::load(dir);
  if (!o.quant.empty()) b.quant = QuantConfig::parse(o.quant);
  return {id, std::move(b)};
}

TensorMap read_inputs(const std::string& tokens, const std::string& input_file) {
  if (!input_file.empty()) {
    std::ifstream in(input_file);
    if (!in) throw std::runtime_error("cannot open " + input_file);
    return tensors_from_json(json::parse(in));
  }
  if (tokens.empty()) throw CLI::ValidationError("give --tokens or --input");
  std::vector<std::int64_t> ids;
  std::stringstream ss(tokens);
  for (std::string t; std::getline(ss, t, ',');) ids.push_back(std::stoll(t));
  const auto n = static_cast<std::int64_t>(ids.size());
  return {{"tokens", IntTensor({n}, std::move(ids))}};
}

void print_outputs(const TensorMap& outputs, const QuantConfig& q) {
  for (const auto& [id, t] : outputs) {
    std::cout << id << " " << shape_to_string(t.shape);
    if (t.shape.size() == 2) {
      std::cout << " argmax:";
      const auto cols = static_cast<std::size_t>(t.shape[1]);
      for (std::size_t r = 0; r < static_cast<std::size_t>(t.shape[0]); ++r) {
        const auto* row = t.data.data() + r * cols;
        std::cout << " " << (std::max_element(row, row + cols) - row);
      }
    } else {
      std::cout << " values:";
      for (std::size_t i = 0; i < std::min<std::size_t>(t.size(), 8); ++i) std::cout << " " << from_fixed(t[i], q);
      if (t.size() > 8) std::cout << " ...";
    }
    std::cout << "\n";
  }
}

void on_signal(int) { std::_Exit(0); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compile, prove and verify quantized model inference"};
  app.require_subcommand(1);

  // toy
  auto* toy = app.add_subcommand("toy", "write a seeded toy model bundle");
  std::string toy_kind = "nanogpt", toy_out;
  NanoGptConfig gpt{65, 16, 2, 4, 32};
  MlpConfig mlp{2, 16};
  std::uint64_t seed = 1;
  std::string quant_text;
  toy->add_option("--kind", toy_kind, "nanogpt or mlp")->check(CLI::IsMember({"nanogpt", "mlp"}));
  toy->add_option("--vocab", gpt.vocab_size);
  toy->add_option("--block", gpt.block_size);
  toy->add_option("--layers", gpt.n_layers, "layers (both kinds)");
  toy->add_option("--heads", gpt.n_heads);
  toy->add_option("--embed", gpt.embed_size);
  toy->add_option("--width", mlp.width);
  toy->add_option("--seed", seed);
  toy->add_option("--quant", quant_text);
  toy->add_option("--out", toy_out, "bundle directory")->required();
  toy->callback([&] {
    const QuantConfig q = quant_text.empty() ? QuantConfig{} : QuantConfig::parse(quant_text);
    ModelBundle b;
    if (toy_kind == "mlp") {
      mlp.n_layers = gpt.n_layers;
      b = make_mlp_bundle(mlp, seed, q);
    } else {
      b = make_nanogpt_bundle(gpt, seed, q, InitOptions::wide_embeddings());
    }
    b.save(toy_out);
    std::cout << "wrote " << toy_out << " digest " << b.commitment().hex() << "\n";
  });

  // compile / profile / commit
  ModelOpts mo;
  std::string out;
  auto* compile = app.add_subcommand("compile", "compile a model and write its public circuit description");
  add_model_opts(compile, mo);
  compile->add_option("--out", out, "description JSON file");
  compile->callback([&] {
    const auto [id, b] = load_model(mo);
    const LoadedModel m(id, b, row_cap(mo));
    const auto& geo = m.committed().description().geometry;
    std::cout << id << ": " << geo.n_rows << " rows x " << geo.n_groups << " groups, " << geo.n_columns()
              << " columns, instance " << m.committed().description().io.size << "\n";
    if (!out.empty()) {
      std::ofstream f(out);
      f << description_to_json(m.committed().description()).dump(2) << "\n";
    }
  });

  bool count_only = false;
  auto* prof = app.add_subcommand("profile", "constraint breakdown of a model");
  add_model_opts(prof, mo);
  prof->add_flag("--count", count_only, "counting walk only; weights are not read");
  prof->callback([&] {
    if (count_only && !mo.graph.empty()) {
      const Graph g = reduce(parse_graph(read_file_text(mo.graph)));
      const QuantConfig q = mo.quant.empty() ? QuantConfig{} : QuantConfig::parse(mo.quant);
      Geometry geo;
      const auto counts = CircuitMatrix::count(g, q, row_cap(mo), &geo);
      std::cout << format_profile(profile(counts, geo, g), fs::path(mo.graph).stem().string());
      return;
    }
    const auto [id, b] = load_model(mo);
    const Graph g = reduce(b.graph());
    if (count_only) {
      Geometry geo;
      const auto counts = CircuitMatrix::count(g, b.quant, row_cap(mo), &geo);
      std::cout << format_profile(profile(counts, geo, g), id);
    } else {
      const auto c = CircuitMatrix::compile(g, quantize_constants(g, b.weights, b.quant), b.quant, row_cap(mo));
      std::cout << format_profile(profile(c, g), id);
    }
  });

  auto* commit_cmd = app.add_subcommand("commit", "print the model commitment digest");
  add_model_opts(commit_cmd, mo);
  commit_cmd->callback([&] { std::cout << load_model(mo).second.commitment().hex() << "\n"; });

  // publish
  std::string registry;
  auto* publish = app.add_subcommand("publish", "append the model's commitment record to a registry");
  add_model_opts(publish, mo);
  publish->add_option("--registry", registry)->required();
  publish->callback([&] {
    const auto [id, b] = load_model(mo);
    const LoadedModel m(id, b, row_cap(mo));
    Registry(registry).publish(m.record());
    std::cout << "published " << id << " " << m.commitment().hex() << "\n";
  });

  // prove
  std::string tokens, input_file;
  std::uint32_t k = kDefaultSamples;
  auto* prove_cmd = app.add_subcommand("prove", "run a model on an input and write a proof");
  add_model_opts(prove_cmd, mo);
  prove_cmd->add_option("--tokens", tokens, "comma-separated token ids");
  prove_cmd->add_option("--input", input_file, "JSON file of named integer tensors");
  prove_cmd->add_option("--k", k, "rows to open");
  prove_cmd->add_option("--out", out, "proof file; the input and output go to <out>.json")->required();
  prove_cmd->callback([&] {
    const auto [id, b] = load_model(mo);
    const LoadedModel m(id, b, row_cap(mo));
    const TensorMap in = read_inputs(tokens, input_file);
    const InferenceResponse r = m.answer(in, k);
    write_file_bytes(out, r.proof);
    std::ofstream f(out + ".json");
    f << json{{"model", id}, {"inputs", tensors_to_json(in)}, {"outputs", tensors_to_json(r.outputs)}}.dump() << "\n";
    print_outputs(r.outputs, b.quant);
    std::cout << "wrote " << r.proof.size() << " byte proof to " << out << "\n";
  });

  // verify
  std::string proof_file;
  auto* verify_cmd = app.add_subcommand("verify", "check a proof file against a registry record");
  verify_cmd->add_option("--model", mo.model, "model id")->required();
  verify_cmd->add_option("--registry", registry)->required();
  verify_cmd->add_option("--proof", proof_file)->required();
  verify_cmd->add_option("--k", k, "minimum rows the proof must open");
  int verify_status = 0;
  verify_cmd->callback([&] {
    const auto rec = Registry(registry).find(mo.model);
    if (!rec) throw RegistryError("no published commitment for model " + mo.model);
    std::ifstream f(proof_file + ".json");
    if (!f) throw std::runtime_error("missing " + proof_file + ".json");
    const json io = json::parse(f);
    const auto rep = check_response(*rec, tensors_from_json(io.at("inputs")), tensors_from_json(io.at("outputs")),
                                    read_file_bytes(proof_file), k);
    if (rep.accepted) {
      std::cout << "accepted\n";
    } else {
      std::cout << "rejected: " << failure_reason_name(rep.reason) << ": " << rep.detail << "\n";
      verify_status = 1;
    }
  });

  // serve
  std::vector<std::string> models, swaps;
  std::string addr = "127.0.0.1:7878";
  auto* serve = app.add_subcommand("serve", "answer inference requests with proofs");
  serve->add_option("--model", models, "[id=]bundle directory; repeatable")->required();
  serve->add_option("--rows", mo.rows);
  serve->add_option("--registry", registry)->required();
  serve->add_option("--addr", addr);
  serve->add_option("--swap", swaps, "id=other: answer requests for id with another model (testing)")->group("");
  serve->callback([&] {
    std::vector<std::shared_ptr<const LoadedModel>> loaded;
    const Registry reg(registry);
    for (const auto& spec : models) {
      ModelOpts o;
      o.model = spec;
      auto [id, b] = load_model(o);
      auto m = std::make_shared<const LoadedModel>(id, std::move(b), row_cap(mo));
      const auto rec = reg.find(id);
      if (!rec || rec->commitment != m->commitment() || rec->description != m->committed().description())
        throw RegistryError("model " + id + " has no matching published commitment");
      loaded.push_back(std::move(m));
    }
    ServerOptions opt;
    for (const auto& s : swaps) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw CLI::ValidationError("--swap wants id=other");
      opt.swap[s.substr(0, eq)] = s.substr(eq + 1);
    }
    Server server(std::move(loaded), opt);
    const auto [host, port] = parse_address(addr);
    server.start(host, port);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on " << host << ":" << server.port() << std::endl;
    server.wait();
  });

  // query
  auto* query = app.add_subcommand("query", "send a request and verify the answer locally");
  query->add_option("--addr", addr);
  query->add_option("--model", mo.model, "model id")->required();
  query->add_option("--registry", registry)->required();
  query->add_option("--tokens", tokens);
  query->add_option("--input", input_file);
  query->add_option("--k", k);
  int query_status = 0;
  query->callback([&] {
    const Registry reg(registry);
    const auto r = client_query(addr, mo.model, read_inputs(tokens, input_file), k, reg);
    const auto rec = reg.find(mo.model);
    print_outputs(r.outputs, rec->description.quant);
    std::cout << "proof " << r.proof_bytes << " bytes, verified in " << r.verify_ms << " ms: ";
    if (r.report.accepted) {
      std::cout << "accepted\n";
    } else {
      std::cout << "rejected: " << failure_reason_name(r.report.reason) << ": " << r.report.detail << "\n";
      query_status = 1;
    }
  });

  // bench
  std::string suite;
  auto* bench = app.add_subcommand("bench", "run a benchmark suite");
  bench->add_option("--suite", suite)->required();
  bench->add_option("--out", out, "directory for bench.txt and bench.tsv");
  bench->callback([&] {
    const auto records = run_bench(load_suite(suite), &std::cerr);
    const std::string table = format_bench_table(records);
    std::cout << table;
    if (!out.empty()) {
      fs::create_directories(out);
      write_file_text((fs::path(out) / "bench.txt").string(), table);
      write_file_text((fs::path(out) / "bench.tsv").string(), bench_tsv(records));
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return verify_status | query_status;
}
