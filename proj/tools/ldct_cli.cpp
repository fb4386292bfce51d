#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ldct/ldct.hpp"

using namespace ldct;

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string trace;
    std::string out;
    std::string config;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "RNG seed");
    app->add_option("--trace", c.trace, "per-iteration CSV trace path");
    app->add_option("--out", c.out, "output path");
    app->add_option("--config", c.config, "scenario key = value file");
}

Scenario load_scenario(const Common& c) {
    Scenario s;
    if (!c.config.empty()) s = apply_config(s, read_key_values(c.config));
    s.validate();
    return s;
}

void require_out(const Common& c) {
    require(!c.out.empty(), ErrorCategory::invalid_argument, "--out is required");
}

void write_noise(const std::string& path, const NoiseModel& nm) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorCategory::io, "cannot open " + path + " for writing");
    out.precision(17);
    out << "i0 = " << nm.mean_i0() << "\nsigma = " << nm.sigma() << "\n";
}

NoiseModel read_noise(const std::string& sino_path, std::optional<double> i0, std::optional<double> sigma) {
    double a = 0.0, s = 0.0;
    if (!i0 || !sigma) {
        const KeyValues kv = read_key_values(sino_path + ".noise");
        require(kv.count("i0") && kv.count("sigma"), ErrorCategory::parse, sino_path + ".noise: needs i0 and sigma");
        a = parse_double(kv.at("i0"), "i0");
        s = parse_double(kv.at("sigma"), "sigma");
    }
    return NoiseModel(i0.value_or(a), sigma.value_or(s));
}

Geometry sinogram_geometry(const Sinogram& y, std::size_t side) {
    const double ps = 1.0 / static_cast<double>(side);
    return Geometry(side, y.n_angles(), y.n_bins(), ps, ps);
}

double resolve_lambda(std::optional<double> absolute, double fraction, const Method& m, const Sinogram& y,
                      const Geometry& g, const NoiseModel& nm) {
    if (absolute) return *absolute;
    return fraction * method_envelope(m, y, g, nm);
}

std::optional<RoI> change_roi(const Scenario& s) {
    if (s.changes.empty()) return std::nullopt;
    return change_box(s, 4);
}

void print_kv(const std::string& k, double v) { std::cout << k << " = " << fmt(v) << "\n"; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Low-dose CT reconstruction toolkit"};
    app.require_subcommand(1);
    Common c;

    // phantom
    auto* phantom = app.add_subcommand("phantom", "write a phantom image");
    add_common(phantom, c);
    std::string which = "test";
    std::string pgm;
    phantom->add_option("--which", which, "'test' or a template index");
    phantom->add_option("--pgm", pgm, "also export a 16-bit PGM");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "simulate a low-dose scan of an image");
    add_common(simulate, c);
    std::string in_path;
    double i0 = 100.0, level = 0.02;
    std::string mode = "variance";
    std::size_t views = 200;
    simulate->add_option("--in", in_path, "input image")->required();
    simulate->add_option("--i0", i0, "incident photons per bin");
    simulate->add_option("--level", level, "Gaussian level relative to the mean count");
    simulate->add_option("--mode", mode, "variance or stddev")->check(CLI::IsMember({"variance", "stddev"}));
    simulate->add_option("--views", views, "number of views");

    // reconstruct
    auto* recon = app.add_subcommand("reconstruct", "reconstruct an image from counts");
    add_common(recon, c);
    std::string method_name = "rnlls-pg";
    std::optional<double> lambda1, opt_i0, opt_sigma;
    double lambda_frac = 1e-3;
    int iters = 150, outer = 3;
    std::size_t size = 0;
    recon->add_option("--in", in_path, "input sinogram (counts)")->required();
    recon->add_option("--method", method_name, "fbp|postlog-cs|nlls|poisson-nll|pg-nll|rnlls|rnlls-pg|conv-pg");
    recon->add_option("--size", size, "image side")->required();
    recon->add_option("--lambda1", lambda1, "absolute lambda1");
    recon->add_option("--lambda-frac", lambda_frac, "lambda1 as a fraction of ||grad f(0)||_inf");
    recon->add_option("--iters", iters, "FISTA iterations");
    recon->add_option("--outer", outer, "pg-nll alternations");
    recon->add_option("--i0", opt_i0, "override i0 from the .noise sidecar");
    recon->add_option("--sigma", opt_sigma, "override sigma from the .noise sidecar");

    // weights-map
    auto* wmap = app.add_subcommand("weights-map", "change weights map of a longitudinal scenario");
    add_common(wmap, c);
    std::string pvalues_out;
    wmap->add_option("--i0", i0, "low-dose intensity");
    wmap->add_option("--pvalues", pvalues_out, "also write the p-value sinogram");

    // prior-recon
    auto* prior = app.add_subcommand("prior-recon", "template-prior reconstruction of a longitudinal scenario");
    add_common(prior, c);
    double lambda2 = 100.0;
    std::string weights_kind = "weighted";
    int rounds = 4;
    prior->add_option("--i0", i0, "low-dose intensity");
    prior->add_option("--lambda1", lambda1, "absolute lambda1");
    prior->add_option("--lambda-frac", lambda_frac, "lambda1 as a fraction of ||grad f(0)||_inf");
    prior->add_option("--lambda2", lambda2, "prior weight");
    prior->add_option("--weights", weights_kind, "weighted|unweighted|none")
        ->check(CLI::IsMember({"weighted", "unweighted", "none"}));
    prior->add_option("--iters", iters, "FISTA iterations per round");
    prior->add_option("--rounds", rounds, "theta/alpha alternations");

    // reirradiate
    auto* reirr = app.add_subcommand("reirradiate", "re-scan bins crossing the detected change and reconstruct");
    add_common(reirr, c);
    double boost = 2.0, max_fraction = 0.2, threshold = 0.5;
    reirr->add_option("--i0", i0, "low-dose intensity");
    reirr->add_option("--boost", boost, "intensity multiplier on re-scanned bins");
    reirr->add_option("--max-fraction", max_fraction, "cap on the re-scanned share of bins");
    reirr->add_option("--threshold", threshold, "weights below this mark change");
    reirr->add_option("--lambda-frac", lambda_frac, "lambda1 as a fraction of ||grad f(0)||_inf");
    reirr->add_option("--lambda2", lambda2, "prior weight");
    reirr->add_option("--iters", iters, "FISTA iterations per round");
    reirr->add_option("--rounds", rounds, "theta/alpha alternations");

    // tune
    auto* tune = app.add_subcommand("tune", "pick lambda1 by the discrepancy statistic");
    add_common(tune, c);
    std::vector<double> grid{0.0001, 0.001, 0.01, 0.1, 1.0, 1.1, 1.2, 1.3, 1.4, 2.0, 5, 10, 15, 20};
    std::string truth_path;
    tune->add_option("--in", in_path, "input sinogram (counts)")->required();
    tune->add_option("--size", size, "image side")->required();
    tune->add_option("--grid", grid, "ascending lambda1 values")->delimiter(',');
    tune->add_option("--truth", truth_path, "reference image for relative MSE");
    tune->add_option("--iters", iters, "FISTA iterations per grid point");
    tune->add_option("--i0", opt_i0, "override i0 from the .noise sidecar");
    tune->add_option("--sigma", opt_sigma, "override sigma from the .noise sidecar");

    // compare
    auto* compare = app.add_subcommand("compare", "SSIM-vs-dose table over methods and seeds");
    add_common(compare, c);
    std::vector<std::string> methods{"fbp", "postlog-cs", "nlls", "poisson-nll", "pg-nll", "conv-pg"};
    compare->add_option("--methods", methods, "methods to run")->delimiter(',');
    compare->add_option("--lambda-frac", lambda_frac, "lambda1 as a fraction of ||grad f(0)||_inf");
    compare->add_option("--iters", iters, "FISTA iterations");
    compare->add_option("--outer", outer, "pg-nll alternations");

    // metrics
    auto* metrics = app.add_subcommand("metrics", "SSIM, relative MSE and RMSE of an estimate");
    add_common(metrics, c);
    std::string est_path;
    std::vector<std::size_t> roi_rect;
    metrics->add_option("--truth", truth_path, "reference image")->required();
    metrics->add_option("--est", est_path, "estimate")->required();
    metrics->add_option("--roi", roi_rect, "row0,col0,height,width")->delimiter(',')->expected(4);

    // lambda2-sweep
    auto* l2sweep = app.add_subcommand("lambda2-sweep", "sensitivity of the weighted prior to lambda2");
    add_common(l2sweep, c);
    std::vector<double> l2grid{0, 25, 50, 100, 200, 400};
    l2sweep->add_option("--i0", i0, "low-dose intensity");
    l2sweep->add_option("--grid", l2grid, "lambda2 values")->delimiter(',');
    l2sweep->add_option("--lambda-frac", lambda_frac, "lambda1 as a fraction of ||grad f(0)||_inf");
    l2sweep->add_option("--iters", iters, "FISTA iterations per round");
    l2sweep->add_option("--rounds", rounds, "theta/alpha alternations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code != 0) std::cerr << "error_category = parse\n";
        return code == 0 ? 0 : static_cast<int>(ErrorCategory::parse);
    }

    try {
        SolveConfig cfg;
        cfg.max_iters = iters;
        cfg.trace_path = c.trace;

        if (*phantom) {
            require_out(c);
            const Scenario s = load_scenario(c);
            const int idx = which == "test" ? kTestObject : static_cast<int>(parse_double(which, "--which"));
            const Image img = generate_phantom(s, idx);
            write_image(c.out, img, "phantom");
            if (!pgm.empty()) write_pgm16(pgm, img);
            std::cout << "scenario_hash = " << scenario_hash(s) << "\n";
        } else if (*simulate) {
            require_out(c);
            const Image img = read_image(in_path);
            const double ps = 1.0 / static_cast<double>(img.side());
            const Geometry g(img.side(), views, std::nullopt, ps, ps);
            const Scan scan = simulate_scan(img, g, i0, level, mode == "variance" ? GaussianMode::variance
                                                                                  : GaussianMode::stddev,
                                            c.seed);
            write_sinogram(c.out, scan.y);
            write_noise(c.out + ".noise", scan.noise);
            print_kv("i0", scan.noise.mean_i0());
            print_kv("sigma", scan.noise.sigma());
            print_kv("poisson_nsr", poisson_nsr(expected_counts(img, g, NoiseModel(i0, 0.0))));
        } else if (*recon) {
            require_out(c);
            const Sinogram y = read_sinogram(in_path);
            const Geometry g = sinogram_geometry(y, size);
            const NoiseModel nm = read_noise(in_path, opt_i0, opt_sigma);
            const Method m = parse_method(method_name);
            ReconSettings rs;
            rs.cfg = cfg;
            rs.pgnll_outer = outer;
            if (!m.is_fbp) rs.cfg.lambda1 = resolve_lambda(lambda1, lambda_frac, m, y, g, nm);
            write_image(c.out, reconstruct(m, y, g, nm, rs), "reconstruction");
            print_kv("lambda1", rs.cfg.lambda1);
        } else if (*wmap) {
            require_out(c);
            const Scenario s = load_scenario(c);
            const Longitudinal L = prepare_longitudinal(s, i0, c.seed);
            write_image(c.out, L.weights.values, "weights");
            if (!pvalues_out.empty()) write_sinogram(pvalues_out, L.pvalues);
            if (!s.changes.empty()) {
                const Mask inside = change_mask(s);
                double in = 0.0, out = 0.0;
                std::size_t ni = 0, no = 0;
                for (std::size_t i = 0; i < inside.size(); ++i)
                    (inside[i] ? (in += L.weights.values[i], ++ni) : (out += L.weights.values[i], ++no));
                print_kv("mean_w_inside", in / static_cast<double>(ni));
                print_kv("mean_w_outside", out / static_cast<double>(no));
            }
        } else if (*prior || *reirr || *l2sweep) {
            const Scenario s = load_scenario(c);
            const Longitudinal L = prepare_longitudinal(s, i0, c.seed);
            const double l1 = lambda1 ? *lambda1 : lambda_frac * method_envelope({false, ObjectiveKind::rnlls_pg},
                                                                                 L.scan.y, L.geometry, L.scan.noise);
            const auto roi = change_roi(s);
            auto report = [&](const Image& x) {
                print_kv("ssim", ssim(L.test, x));
                print_kv("rel_mse", relative_mse(L.test, x));
                if (roi) {
                    print_kv("roi_ssim", ssim(L.test, x, roi));
                    print_kv("roi_rmse", rmse(L.test, x, roi));
                }
            };
            if (*prior) {
                require_out(c);
                Image x;
                if (weights_kind == "none") {
                    cfg.lambda1 = l1;
                    x = synthesize(pilot_reconstruction(L.scan.y, L.geometry, L.scan.noise, cfg).final_theta);
                } else {
                    const WeightsMap w = weights_kind == "weighted" ? L.weights : uniform_weights(s.size);
                    x = reconstruct_weighted_prior(L.scan.y, L.geometry, L.scan.noise, L.image_space, w, l1, lambda2,
                                                   cfg, std::nullopt, rounds)
                            .image;
                }
                write_image(c.out, x, "reconstruction");
                report(x);
            } else if (*reirr) {
                require_out(c);
                const BinSelection sel = select_bins(L.weights, L.geometry, threshold, max_fraction);
                if (sel.empty) std::cerr << "warning: no bins cross the detected change\n";
                const MergedScan m = merge_measurements(L.scan.y, sel, L.test, L.geometry, i0, boost,
                                                        L.scan.noise.sigma(), c.seed + 1'000'003);
                const Image x =
                    reconstruct_reirradiated(m, L.geometry, L.image_space, L.weights, l1, lambda2, cfg, std::nullopt,
                                             rounds)
                        .image;
                write_image(c.out, x, "reconstruction");
                print_kv("selected_fraction", sel.fraction);
                print_kv("extra_dose_fraction", m.extra_dose_fraction);
                report(x);
            } else {
                Table t({"lambda2", "ssim", "rel_mse", "roi_ssim", "roi_rmse"});
                for (double l2 : l2grid) {
                    const Image x = reconstruct_weighted_prior(L.scan.y, L.geometry, L.scan.noise, L.image_space,
                                                               L.weights, l1, l2, cfg, std::nullopt, rounds)
                                        .image;
                    t.add_row({fmt(l2), fmt(ssim(L.test, x)), fmt(relative_mse(L.test, x)),
                               roi ? fmt(ssim(L.test, x, roi)) : "", roi ? fmt(rmse(L.test, x, roi)) : ""});
                }
                if (c.out.empty()) t.write(std::cout);
                else t.write(c.out);
            }
        } else if (*tune) {
            const Sinogram y = read_sinogram(in_path);
            const Geometry g = sinogram_geometry(y, size);
            const NoiseModel nm = read_noise(in_path, opt_i0, opt_sigma);
            std::optional<Image> truth;
            if (!truth_path.empty()) truth = read_image(truth_path);
            const TuneResult r = tune_lambda1(y, g, nm, grid, cfg, truth);
            Table t({"lambda1", "D", "rel_mse", "valid"});
            for (std::size_t i = 0; i < r.grid.size(); ++i)
                t.add_row({fmt(r.grid[i]), fmt(r.d_values[i]), r.rel_mse ? fmt((*r.rel_mse)[i]) : "",
                           r.valid[i] ? "1" : "0"});
            if (c.out.empty()) t.write(std::cout);
            else t.write(c.out);
            std::cerr << "chosen_lambda1 = " << fmt(r.chosen_lambda) << "\n";
        } else if (*compare) {
            Scenario s = load_scenario(c);
            std::vector<Method> ms;
            for (const auto& n : methods) ms.push_back(parse_method(n));
            ReconSettings rs;
            rs.cfg = cfg;
            rs.pgnll_outer = outer;
            const Geometry g = scenario_geometry(s);
            const Image truth = generate_phantom(s, kTestObject);
            // Envelope from a seed-free noiseless scan, so lambda1 is fixed per (method, dose).
            auto policy = [&](const Method& m, double dose) {
                const Sinogram y = expected_counts(truth, g, NoiseModel(dose, 0.0));
                return lambda_frac * method_envelope(m, y, g, NoiseModel(dose, 0.0));
            };
            const auto recs = run_comparison(s, ms, policy, rs, change_roi(s));
            const Table t = records_table(recs);
            if (c.out.empty()) t.write(std::cout);
            else t.write(c.out);
        } else if (*metrics) {
            const Image truth = read_image(truth_path);
            const Image est = read_image(est_path);
            std::optional<RoI> roi;
            if (!roi_rect.empty()) roi = RoI::rect(roi_rect[0], roi_rect[1], roi_rect[2], roi_rect[3]);
            print_kv("ssim", ssim(truth, est, roi));
            print_kv("rel_mse", relative_mse(truth, est, roi));
            print_kv("rmse", rmse(truth, est, roi));
        }
    } catch (const Error& e) {
        std::cerr << "error_category = " << to_string(e.category()) << "\nerror = " << e.what() << "\n";
        return static_cast<int>(e.category());
    }
    return 0;
}
