#pragma once

#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fb4/analytics.hpp"
#include "fb4/baselines.hpp"
#include "fb4/config.hpp"
#include "fb4/container.hpp"
#include "fb4/decomp.hpp"
#include "fb4/pipeline.hpp"
#include "fb4/quant.hpp"
#include "fb4/seda.hpp"

namespace fb4 {

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void emit(const std::string& text, const std::string& path,
                 std::ostream& out) {
  if (path.empty())
    out << text;
  else
    write_text(path, text);
}

// "all" or a comma-separated token id list
inline std::set<std::size_t> parse_salient_spec(const std::string& spec,
                                                std::uint64_t rows) {
  std::set<std::size_t> out;
  if (spec == "all") {
    for (std::uint64_t r = 0; r < rows; ++r)
      out.insert(static_cast<std::size_t>(r));
    return out;
  }
  std::istringstream ss(spec);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    std::size_t pos = 0;
    const std::uint64_t id = std::stoull(token, &pos);
    if (pos != token.size() || id >= rows)
      throw std::invalid_argument("--decompose: bad token id '" + token + "'");
    out.insert(static_cast<std::size_t>(id));
  }
  return out;
}

// Per-row innermost-axis blocking shared with the FB4 path.
inline MetricsReport baseline_metrics(const Tensor& t, Fp4Scheme scheme,
                                      int block_size) {
  Tensor recon = Tensor::zeros(t.shape);
  double tensor_amax = 0.0;
  for (float v : t.data)
    tensor_amax = std::max(tensor_amax, std::abs(static_cast<double>(v)));
  const std::uint64_t rows = t.rows();
  const std::uint64_t inner = t.inner();
  const std::uint64_t bpr =
      (inner + static_cast<std::uint64_t>(block_size) - 1) /
      static_cast<std::uint64_t>(block_size);
  std::vector<float> buf;
  for (std::uint64_t r = 0; r < rows; ++r) {
    for (std::uint64_t c = 0; c < bpr; ++c) {
      gather_block(t, r, c, block_size, buf);
      const std::vector<float> back =
          scheme == Fp4Scheme::Mxfp4
              ? dequantize_mxfp4(quantize_mxfp4(buf))
              : dequantize_nvfp4(quantize_nvfp4(buf, tensor_amax));
      const std::uint64_t start = c * static_cast<std::uint64_t>(block_size);
      const std::uint64_t len =
          start >= inner ? 0 : std::min<std::uint64_t>(back.size(), inner - start);
      for (std::uint64_t i = 0; i < len; ++i)
        recon.data[static_cast<std::size_t>(r * inner + start + i)] =
            back[static_cast<std::size_t>(i)];
    }
  }
  return compare(t, recon);
}

} // namespace detail

inline int run_cli(const std::vector<std::string>& args,
                   std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"FB4 block-wise mixed-format 4-bit quantization toolkit"};
  app.require_subcommand(1);

  // -- formatbook --
  std::string fb_out;
  CLI::App* cmd_fb = app.add_subcommand(
      "formatbook", "Print the canonical 32-dialect formatbook and its hash");
  cmd_fb->add_option("--out", fb_out, "Write to file instead of stdout");

  // -- quantize --
  std::string q_in, q_out, q_mode = "grouped", q_sidecar, q_decompose;
  int q_block = 32, q_groups = 8;
  CLI::App* cmd_q = app.add_subcommand("quantize", "FBT1 tensor -> FBQ1 container");
  cmd_q->add_option("input", q_in, "input .fbt1")->required();
  cmd_q->add_option("output", q_out, "output .fbq1")->required();
  cmd_q->add_option("--block", q_block, "block size (16 or 32)")
      ->check(CLI::IsMember({16, 32}));
  cmd_q->add_option("--groups", q_groups, "num_groups for grouped selection");
  cmd_q->add_option("--mode", q_mode, "dialect selection: grouped | exact")
      ->check(CLI::IsMember({"grouped", "exact"}));
  cmd_q->add_option("--seda-sidecar", q_sidecar,
                    "SeDA sidecar (anchors + sedabook) to constrain with");
  cmd_q->add_option("--decompose", q_decompose,
                    "salient tokens: 'all' or comma-separated row ids");

  // -- dequantize --
  std::string d_in, d_out;
  CLI::App* cmd_d = app.add_subcommand("dequantize", "FBQ1 container -> FBT1 tensor");
  cmd_d->add_option("input", d_in, "input .fbq1")->required();
  cmd_d->add_option("output", d_out, "output .fbt1")->required();

  // -- compare --
  std::string c_a, c_b, c_out;
  CLI::App* cmd_c = app.add_subcommand("compare", "Error metrics between two FBT1 tensors");
  cmd_c->add_option("a", c_a, "reference .fbt1")->required();
  cmd_c->add_option("b", c_b, "reconstructed .fbt1")->required();
  cmd_c->add_option("--out", c_out, "CSV output file (default stdout)");

  // -- baseline --
  std::string b_in, b_scheme, b_out;
  int b_block = 32;
  CLI::App* cmd_b = app.add_subcommand("baseline", "MXFP4/NVFP4-style comparison metrics");
  cmd_b->add_option("input", b_in, "input .fbt1")->required();
  cmd_b->add_option("--scheme", b_scheme, "mxfp4 | nvfp4")
      ->required()
      ->check(CLI::IsMember({"mxfp4", "nvfp4"}));
  cmd_b->add_option("--block", b_block, "block size")->check(CLI::IsMember({16, 32}));
  cmd_b->add_option("--out", b_out, "CSV output file (default stdout)");

  // -- simulate --
  std::string s_config, s_csv, s_summary;
  CLI::App* cmd_s = app.add_subcommand("simulate", "Run the toy denoising loop");
  cmd_s->add_option("config", s_config, "run config file")->required();
  cmd_s->add_option("--csv", s_csv, "per-step CSV output file (default stdout)");
  cmd_s->add_option("--summary", s_summary, "summary output file");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed)); // CLI11 takes the vector reversed
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    const Formatbook fb = build_formatbook();
    const LutSet luts = build_luts(fb);

    if (cmd_fb->parsed()) {
      std::ostringstream text;
      text << fb.serialize();
      char hex[32];
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(fb.hash()));
      text << "hash " << hex << '\n';
      detail::emit(text.str(), fb_out, out);
      return 0;
    }

    if (cmd_q->parsed()) {
      const Tensor t = read_fbt1(q_in);
      const BlockLayout layout{q_block, q_groups};
      const SelectionMode mode = detail::parse_mode(q_mode);
      std::vector<std::uint8_t> bytes;
      if (!q_sidecar.empty()) {
        const auto [anchors, book] =
            parse_sidecar(detail::read_text(q_sidecar));
        ResidualSection residual;
        const bool decompose_also = !q_decompose.empty();
        const QuantizedTensor qt =
            seda_quantize(t, anchors, book, layout, fb, luts, mode,
                          decompose_also, decompose_also ? &residual : nullptr);
        bytes = pack(qt, decompose_also ? &residual : nullptr);
      } else if (!q_decompose.empty()) {
        const auto salient = detail::parse_salient_spec(q_decompose, t.rows());
        const DecomposedTensor dt =
            quantize_with_decomposition(t, salient, layout, fb, luts, mode);
        bytes = pack(dt.primary, &dt.residual);
      } else {
        bytes = pack(quantize_tensor(t, layout, fb, luts, mode));
      }
      write_file(q_out, bytes);
      return 0;
    }

    if (cmd_d->parsed()) {
      const auto bytes = read_file(d_in);
      const UnpackResult res = unpack(bytes);
      Tensor t;
      if (res.residual) {
        t = dequantize_decomposed_tensor(
            DecomposedTensor{res.tensor, *res.residual}, fb);
      } else {
        t = dequantize_tensor(res.tensor, fb);
      }
      write_fbt1(d_out, t);
      return 0;
    }

    if (cmd_c->parsed()) {
      const MetricsReport r = compare(read_fbt1(c_a), read_fbt1(c_b));
      detail::emit(r.csv(), c_out, out);
      return 0;
    }

    if (cmd_b->parsed()) {
      const Tensor t = read_fbt1(b_in);
      const Fp4Scheme scheme =
          b_scheme == "mxfp4" ? Fp4Scheme::Mxfp4 : Fp4Scheme::Nvfp4;
      const MetricsReport r = detail::baseline_metrics(t, scheme, b_block);
      const BlockLayout layout{b_block, 8};
      std::ostringstream text;
      text << r.csv();
      text.precision(12);
      if (scheme == Fp4Scheme::Mxfp4) {
        text << "effective_bits_5bit_scale,"
             << effective_bits(layout, BitScheme::Mxfp4Acct5) << '\n';
        text << "effective_bits_8bit_scale,"
             << effective_bits(layout, BitScheme::Mxfp4Acct8) << '\n';
      } else {
        text << "effective_bits," << effective_bits(layout, BitScheme::Nvfp4)
             << '\n';
      }
      detail::emit(text.str(), b_out, out);
      return 0;
    }

    if (cmd_s->parsed()) {
      const RunConfig cfg = parse_run_config(detail::read_text(s_config));
      const RunReport report = run_denoise_loop(cfg, fb, luts);
      detail::emit(report.csv(), s_csv, out);
      if (!s_summary.empty())
        detail::write_text(s_summary, report.summary());
      else
        err << report.summary();
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

} // namespace fb4
