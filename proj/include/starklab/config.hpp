#pragma once

#include <algorithm>
#include <cctype>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "starklab/csv.hpp"
#include "starklab/errors.hpp"
#include "starklab/exponents.hpp"
#include "starklab/ratelab.hpp"
#include "starklab/reconstruction.hpp"
#include "starklab/scattering.hpp"

namespace starklab {

inline constexpr const char* kVersion = "1.0.0";

enum class ExperimentKind { propagate, smatrix, reconstruct, ratecheck, exponents };

inline std::string kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::propagate: return "propagate";
        case ExperimentKind::smatrix: return "smatrix";
        case ExperimentKind::reconstruct: return "reconstruct";
        case ExperimentKind::ratecheck: return "ratecheck";
        case ExperimentKind::exponents: return "exponents";
    }
    return "?";
}

struct GridBlock {
    int dims = 2;
    int points_per_axis = 64;
    double box_half_width = 12.0;
};

struct PacketBlock {
    PacketProfile profile{};
    Vec boost{};
};

// Axes are 0-based here; files use 1-based axis numbers.
struct ScheduleBlock {
    std::vector<double> speeds;
    std::vector<double> angles_rad;
    std::vector<double> offsets;
    std::vector<int> axes{0};
    double delta_max = 0.9;
};

struct PropagateBlock {
    double t_from = 0.0;
    double t_to = 2.0;
    double dt = 0.0;  // 0 selects dt_max(V)
    int snapshots = 5;
    double exact_tolerance = 1e-10;
};

struct SmatrixBlock {
    ModifierKind kind = ModifierKind::none;
    HorizonPolicy policy{};
    double zero_tolerance = 1e-10;
    double unitarity_budget = 1e-3;
};

struct ReconstructBlock {
    SampleSource source = SampleSource::measured;
    ReconstructionGrid grid{};
    double max_error = 0.15;
    double max_curl = 0.05;
    double noise_relative = 0.0;  // gaussian noise on sample values, relative to their RMS
};

struct RatecheckBlock {
    std::vector<std::string> targets;
    double vhat_angle_rad = 0.5 * std::numbers::pi;
    SweepOptions sweep{};
};

struct ExponentsBlock {
    std::vector<Scenario> scenarios;
    std::vector<double> gamma0, gamma1, gamma2, gamma_D;
    double tolerance = 1e-6;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::exponents;
    std::string name;
    std::filesystem::path output_dir;
    unsigned long seed = 0;
    GridBlock grid;
    PacketBlock packet;
    PotentialSpec potential;
    ScheduleBlock schedule;
    PropagateBlock propagate;
    SmatrixBlock smatrix;
    ReconstructBlock reconstruct;
    RatecheckBlock ratecheck;
    ExponentsBlock exponents;
    std::string text;  // the file as read, hashed into the manifest
};

namespace detail {

using boost::property_tree::ptree;

[[noreturn]] inline void invalid(const std::string& path, const std::string& why) {
    fail(ErrorCode::ConfigInvalid, path + ": " + why);
}

inline std::string trim(std::string s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// Reads one section, remembering which keys were consumed so leftovers can be flagged.
class Section {
public:
    Section(std::string name, const ptree* tree) : name_(std::move(name)), tree_(tree) {}

    bool present() const { return tree_ != nullptr; }
    const std::string& name() const { return name_; }
    std::string path(const std::string& key) const { return name_ + "." + key; }

    std::optional<std::string> raw(const std::string& key) {
        used_.insert(key);
        if (!tree_) return std::nullopt;
        auto v = tree_->get_optional<std::string>(ptree::path_type(key, '\0'));
        if (!v) return std::nullopt;
        // Inline comments start at a ';' or '#' preceded by whitespace.
        for (std::size_t i = 1; i < v->size(); ++i)
            if (((*v)[i] == ';' || (*v)[i] == '#') && std::isspace(static_cast<unsigned char>((*v)[i - 1]))) {
                v->resize(i);
                break;
            }
        return trim(*v);
    }

    double number(const std::string& key, double fallback) {
        auto v = raw(key);
        return v ? parse_number(key, *v) : fallback;
    }

    std::optional<double> maybe_number(const std::string& key) {
        auto v = raw(key);
        if (!v) return std::nullopt;
        return parse_number(key, *v);
    }

    int integer(const std::string& key, int fallback) {
        const double x = number(key, fallback);
        if (x != std::floor(x) || std::abs(x) > 1e9) invalid(path(key), "expected an integer");
        return static_cast<int>(x);
    }

    std::string text(const std::string& key, const std::string& fallback) { return raw(key).value_or(fallback); }

    bool flag(const std::string& key, bool fallback) {
        auto v = raw(key);
        if (!v) return fallback;
        if (*v == "true" || *v == "yes" || *v == "1") return true;
        if (*v == "false" || *v == "no" || *v == "0") return false;
        invalid(path(key), "expected true or false, got '" + *v + "'");
    }

    std::vector<double> numbers(const std::string& key) {
        std::vector<double> out;
        auto v = raw(key);
        if (!v) return out;
        for (const auto& item : words(*v)) out.push_back(parse_number(key, item));
        return out;
    }

    std::vector<std::string> words(const std::string& list) const {
        std::vector<std::string> out;
        std::stringstream ss(list);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    void reject_unknown(ExperimentKind k) const {
        if (!tree_) return;
        if (used_.empty()) invalid(name_, "section not used by kind " + kind_name(k));
        for (const auto& [key, _] : *tree_)
            if (!used_.count(key)) invalid(path(key), "unknown key");
    }

private:
    double parse_number(const std::string& key, const std::string& s) const {
        try {
            std::size_t pos = 0;
            const double x = std::stod(s, &pos);
            if (pos != s.size() || !std::isfinite(x)) throw std::invalid_argument(s);
            return x;
        } catch (const std::exception&) {
            invalid(path(key), "expected a number, got '" + s + "'");
        }
    }

    std::string name_;
    const ptree* tree_;
    std::set<std::string> used_;
};

inline Vec read_vec(Section& s, const std::string& stem, Vec fallback) {
    for (int i = 0; i < 3; ++i) fallback[i] = s.number(stem + std::to_string(i + 1), fallback[i]);
    return fallback;
}

inline Form read_form(Section& s) {
    const std::string form = s.text("form", "");
    const double amp = s.number("amplitude", 1.0);
    const Vec center = read_vec(s, "center_x", {});
    if (form == "gaussian") {
        GaussianForm g{amp, center, read_vec(s, "width_x", {1.0, 1.0, 1.0})};
        for (int i = 0; i < 3; ++i)
            if (!(g.width[i] > 0.0)) invalid(s.path("width_x" + std::to_string(i + 1)), "must be positive");
        return g;
    }
    if (form == "power") {
        PowerForm p{amp, center, s.number("scale", 1.0), s.number("exponent", 1.0)};
        if (!(p.scale > 0.0)) invalid(s.path("scale"), "must be positive");
        if (!(p.exponent > 0.0)) invalid(s.path("exponent"), "must be positive");
        return p;
    }
    if (form == "anisotropic_power") {
        AnisotropicPowerForm a{amp,
                               center,
                               s.number("scale_parallel", 1.0),
                               s.number("scale_perp", 1.0),
                               s.number("exponent_parallel", 1.0),
                               s.number("exponent_perp", 1.0)};
        if (!(a.scale_parallel > 0.0 && a.scale_perp > 0.0)) invalid(s.path("scale_parallel"), "scales must be positive");
        return a;
    }
    invalid(s.path("form"), "expected gaussian, power or anisotropic_power, got '" + form + "'");
}

inline ExperimentKind parse_kind(const std::string& path, const std::string& s) {
    for (auto k : {ExperimentKind::propagate, ExperimentKind::smatrix, ExperimentKind::reconstruct,
                   ExperimentKind::ratecheck, ExperimentKind::exponents})
        if (kind_name(k) == s) return k;
    invalid(path, "unknown experiment kind '" + s + "'");
}

inline void require(const Section& s, ExperimentKind k) {
    if (!s.present()) invalid(s.name(), "section required for kind " + kind_name(k));
}

// Converts module validation failures raised while building a block into config errors.
template <class F>
auto as_config(const std::string& path, F f) -> decltype(f()) {
    try {
        return f();
    } catch (const LabError& e) {
        if (e.code() == ErrorCode::ConfigInvalid) throw;
        invalid(path, e.what());
    }
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
    using detail::invalid;
    using detail::Section;
    detail::ptree tree;
    try {
        std::istringstream in(text);
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        invalid("line " + std::to_string(e.line()), e.message());
    }
    std::map<std::string, Section> sections;
    for (const auto& [name, child] : tree) {
        if (child.empty() && !child.data().empty()) invalid(name, "keys must live inside a section");
        sections.emplace(name, Section(name, &child));
    }
    auto section = [&](const std::string& name) -> Section& {
        auto it = sections.find(name);
        if (it == sections.end()) it = sections.emplace(name, Section(name, nullptr)).first;
        return it->second;
    };

    ExperimentConfig c;
    c.text = text;
    Section& ex = section("experiment");
    if (!ex.present()) invalid("experiment", "section required");
    const auto kind = ex.raw("kind");
    if (!kind) invalid("experiment.kind", "required");
    c.kind = detail::parse_kind("experiment.kind", *kind);
    c.name = ex.text("name", kind_name(c.kind));
    c.output_dir = ex.text("output_dir", "out/" + c.name);
    const double seed = ex.number("seed", 0.0);
    if (seed < 0.0 || seed != std::floor(seed)) invalid("experiment.seed", "expected a non-negative integer");
    c.seed = static_cast<unsigned long>(seed);
    const ExperimentKind k = c.kind;
    const bool physical = k != ExperimentKind::exponents;

    Section& grid = section("grid");
    if (physical) detail::require(grid, k);
    c.grid.dims = grid.integer("dims", c.grid.dims);
    c.grid.points_per_axis = grid.integer("points_per_axis", c.grid.points_per_axis);
    c.grid.box_half_width = grid.number("box_half_width", c.grid.box_half_width);
    if (physical)
        detail::as_config("grid", [&] { return make_grid(c.grid.dims, c.grid.points_per_axis, c.grid.box_half_width); });

    Section& packet = section("packet");
    if (physical) detail::require(packet, k);
    c.packet.profile.eta = packet.number("eta", c.packet.profile.eta);
    c.packet.profile.center_x = detail::read_vec(packet, "center_x", {});
    c.packet.profile.bump_sharpness = packet.number("bump_sharpness", c.packet.profile.bump_sharpness);
    c.packet.boost = detail::read_vec(packet, "boost_v", {});

    Section& pot = section("potential");
    c.potential.gamma_vs = pot.number("gamma_vs", c.potential.gamma_vs);
    c.potential.gamma0 = pot.number("gamma0", c.potential.gamma0);
    c.potential.gamma1 = pot.number("gamma1", c.potential.gamma1);
    c.potential.gamma2 = pot.maybe_number("gamma2");
    c.potential.gamma_D = pot.number("gamma_D", c.potential.gamma_D);
    // Forms live in sections named <part>_term<k>, e.g. [s_term1].
    for (auto& [name, sec] : sections) {
        const auto us = name.find("_term");
        if (us == std::string::npos) continue;
        const std::string part = name.substr(0, us);
        std::optional<Part>* slot = part == "vs"  ? &c.potential.vs_part
                                    : part == "s" ? &c.potential.s_part
                                    : part == "l" ? &c.potential.l_part
                                                  : nullptr;
        if (!slot) invalid(name, "potential terms are named vs_termN, s_termN or l_termN");
        if (!*slot) *slot = Part{};
        (*slot)->terms.push_back(detail::read_form(sec));
    }
    if (!c.potential.empty()) detail::as_config("potential", [&] { check_windows(c.potential); });

    Section& sched = section("schedule");
    c.schedule.speeds = sched.numbers("speeds");
    c.schedule.delta_max = sched.number("delta_max", c.schedule.delta_max);
    c.schedule.angles_rad = sched.numbers("angles_rad");
    if (auto n = sched.maybe_number("angle_count")) {
        if (!c.schedule.angles_rad.empty()) invalid("schedule.angle_count", "give angles_rad or angle_count, not both");
        c.schedule.angles_rad = detail::as_config("schedule.angle_count", [&] {
            return admissible_angles(static_cast<int>(*n), c.schedule.delta_max);
        });
    }
    c.schedule.offsets = sched.numbers("offsets");
    if (auto n = sched.maybe_number("offset_count")) {
        if (!c.schedule.offsets.empty()) invalid("schedule.offset_count", "give offsets or offset_count, not both");
        const double hw = sched.number("offset_half_width", 4.0);
        c.schedule.offsets = detail::as_config("schedule.offset_count", [&] { return even_offsets(static_cast<int>(*n), hw); });
    }
    if (auto axes = sched.numbers("axes"); !axes.empty()) {
        c.schedule.axes.clear();
        for (double a : axes) {
            if (a != std::floor(a) || a < 1 || a > c.grid.dims) invalid("schedule.axes", "axes are 1.." + fmt(c.grid.dims));
            c.schedule.axes.push_back(static_cast<int>(a) - 1);
        }
    }
    for (std::size_t i = 0; i < c.schedule.speeds.size(); ++i) {
        if (!(c.schedule.speeds[i] > 0.0)) invalid("schedule.speeds", "speeds must be positive");
        if (i > 0 && !(c.schedule.speeds[i] > c.schedule.speeds[i - 1]))
            invalid("schedule.speeds", "speeds must increase strictly");
    }
    if (!(c.schedule.delta_max > 0.0 && c.schedule.delta_max < 1.0)) invalid("schedule.delta_max", "must lie in (0, 1)");
    for (std::size_t i = 0; i < c.schedule.angles_rad.size(); ++i) {
        const double cosine = std::abs(std::cos(c.schedule.angles_rad[i]));
        if (cosine > c.schedule.delta_max + 1e-12)
            invalid("schedule.angles_rad[" + std::to_string(i) + "]",
                    "|vhat.e1| = " + fmt(cosine) + " exceeds delta_max = " + fmt(c.schedule.delta_max) +
                        "; directions must stay off the field axis (|vhat.e1| < 1)");
    }

    Section& prop = section("propagate");
    Section& sm = section("smatrix");
    Section& rc = section("reconstruct");
    Section& rate = section("ratecheck");
    Section& expo = section("exponents");
    auto policy_from = [&](Section& s) {
        HorizonPolicy p;
        p.cook_tolerance = s.number("cook_tolerance", p.cook_tolerance);
        p.max_T = s.number("max_time", p.max_T);
        p.dt = s.number("dt", p.dt);
        if (auto t = s.maybe_number("horizon_time")) {
            p.T_plus = *t;
            p.T_minus = -*t;
        }
        if (!(p.cook_tolerance > 0.0)) invalid(s.path("cook_tolerance"), "must be positive");
        return p;
    };
    auto need_speeds = [&](std::size_t n) {
        if (c.schedule.speeds.size() < n) invalid("schedule.speeds", "needs at least " + std::to_string(n) + " speeds");
    };
    auto need_angles = [&] {
        if (c.schedule.angles_rad.empty()) invalid("schedule.angles_rad", "needs angles_rad or angle_count");
    };

    switch (k) {
        case ExperimentKind::propagate: {
            detail::require(prop, k);
            c.propagate.t_from = prop.number("t_from", c.propagate.t_from);
            c.propagate.t_to = prop.number("t_to", c.propagate.t_to);
            c.propagate.dt = prop.number("dt", c.propagate.dt);
            c.propagate.snapshots = prop.integer("snapshots", c.propagate.snapshots);
            c.propagate.exact_tolerance = prop.number("exact_tolerance", c.propagate.exact_tolerance);
            if (c.propagate.snapshots < 2) invalid("propagate.snapshots", "needs at least 2");
            if (c.propagate.dt < 0.0) invalid("propagate.dt", "must be non-negative");
            break;
        }
        case ExperimentKind::smatrix: {
            detail::require(sm, k);
            detail::require(sched, k);
            need_speeds(1);
            need_angles();
            c.smatrix.kind = detail::as_config("smatrix.modifier", [&] { return parse_modifier(sm.text("modifier", "none")); });
            c.smatrix.policy = policy_from(sm);
            c.smatrix.zero_tolerance = sm.number("zero_tolerance", c.smatrix.zero_tolerance);
            c.smatrix.unitarity_budget = sm.number("unitarity_budget", c.smatrix.unitarity_budget);
            detail::as_config("smatrix.modifier", [&] { check_modifier(c.potential, c.smatrix.kind); });
            break;
        }
        case ExperimentKind::reconstruct: {
            detail::require(rc, k);
            detail::require(sched, k);
            need_speeds(1);
            need_angles();
            if (c.schedule.offsets.size() < 2) invalid("schedule.offsets", "needs at least 2 offsets");
            if (!c.potential.has(PartKind::s)) invalid("potential", "reconstruct needs an s_term section");
            const std::string src = rc.text("source", "measured");
            if (src == "measured")
                c.reconstruct.source = SampleSource::measured;
            else if (src == "rhs_direct")
                c.reconstruct.source = SampleSource::rhs_direct;
            else
                invalid("reconstruct.source", "expected measured or rhs_direct");
            auto& g = c.reconstruct.grid;
            g.raster = rc.integer("raster_points", g.raster);
            g.half_width = rc.number("raster_half_width", g.half_width);
            g.support_radius = rc.number("support_radius", g.support_radius);
            g.error_radius = rc.number("error_radius", g.error_radius);
            g.tikhonov_floor = rc.number("tikhonov_floor", g.tikhonov_floor);
            g.fit_regularization = rc.number("fit_regularization", g.fit_regularization);
            g.min_angles = rc.integer("min_angles", g.min_angles);
            g.delta_max = c.schedule.delta_max;
            c.reconstruct.max_error = rc.number("max_error", c.reconstruct.max_error);
            c.reconstruct.max_curl = rc.number("max_curl", c.reconstruct.max_curl);
            c.reconstruct.noise_relative = rc.number("noise_relative", c.reconstruct.noise_relative);
            if (c.reconstruct.noise_relative < 0.0) invalid("reconstruct.noise_relative", "must be non-negative");
            break;
        }
        case ExperimentKind::ratecheck: {
            detail::require(rate, k);
            detail::require(sched, k);
            detail::as_config("schedule.speeds", [&] { check_schedule(c.schedule.speeds); });
            for (const auto& id : rate.words(rate.text("targets", ""))) {
                detail::as_config("ratecheck.targets", [&] { return find_target(id); });
                c.ratecheck.targets.push_back(id);
            }
            if (c.ratecheck.targets.empty()) invalid("ratecheck.targets", "list at least one target");
            c.ratecheck.vhat_angle_rad = rate.number("vhat_angle_rad", c.ratecheck.vhat_angle_rad);
            if (std::abs(std::cos(c.ratecheck.vhat_angle_rad)) >= 1.0 - 1e-12)
                invalid("ratecheck.vhat_angle_rad", "direction must stay off the field axis (|vhat.e1| < 1)");
            c.ratecheck.sweep.margin = rate.number("margin", c.ratecheck.sweep.margin);
            c.ratecheck.sweep.growth_time = rate.number("growth_time", c.ratecheck.sweep.growth_time);
            c.ratecheck.sweep.rate.drop_counterterm = rate.flag("drop_counterterm", false);
            c.ratecheck.sweep.rate.horizon_limit = rate.number("horizon_limit", c.ratecheck.sweep.rate.horizon_limit);
            for (const auto& id : c.ratecheck.targets)
                detail::as_config("ratecheck.targets", [&] {
                    const auto& t = find_target(id);
                    detail::require_target_parts(t, c.potential);
                    return predicted_exponent(t, c.potential);
                });
            break;
        }
        case ExperimentKind::exponents: {
            detail::require(expo, k);
            for (const auto& s : expo.words(expo.text("scenarios", "")))
                c.exponents.scenarios.push_back(detail::as_config("exponents.scenarios", [&] { return parse_scenario(s); }));
            if (c.exponents.scenarios.empty()) invalid("exponents.scenarios", "list at least one scenario");
            c.exponents.gamma0 = expo.numbers("gamma0");
            c.exponents.gamma1 = expo.numbers("gamma1");
            c.exponents.gamma2 = expo.numbers("gamma2");
            c.exponents.gamma_D = expo.numbers("gamma_D");
            c.exponents.tolerance = expo.number("tolerance", c.exponents.tolerance);
            if (c.exponents.gamma0.empty()) invalid("exponents.gamma0", "required");
            if (c.exponents.gamma1.empty()) invalid("exponents.gamma1", "required");
            break;
        }
    }
    for (auto& [name, s] : sections) s.reject_unknown(k);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::ConfigInvalid, path.string() + ": cannot read config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        fail(ErrorCode::InvalidArgument, "sha256 failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return out.str();
}

inline std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Verdict {
    std::string check;
    double value = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

struct RunResult {
    std::filesystem::path output_dir;
    std::vector<Verdict> verdicts;
    std::vector<std::filesystem::path> artifacts;
    std::string summary;

    bool all_pass() const {
        return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
    }
};

namespace detail {

inline CsvTable verdict_table(const std::vector<Verdict>& vs) {
    CsvTable t;
    t.schema = "verdicts";
    t.columns = {"check", "value", "threshold", "verdict"};
    for (const auto& v : vs) t.rows.push_back({v.check, fmt(v.value), fmt(v.threshold), fmt(v.pass)});
    return t;
}

inline State initial_packet(const ExperimentConfig& c) {
    auto g = make_grid(c.grid.dims, c.grid.points_per_axis, c.grid.box_half_width);
    return boost(make_packet(g, c.packet.profile), c.packet.boost);
}

inline void run_propagate(const ExperimentConfig& c, RunResult& r) {
    const auto& p = c.propagate;
    const State s0 = initial_packet(c);
    const double dt = p.dt > 0.0 ? p.dt : dt_max(c.potential);
    CsvTable t;
    t.schema = "trajectory";
    t.columns = {"t", "norm", "x1", "x2", "p1", "p2", "boundary_mass", "steps"};
    State s = s0;
    double t_prev = p.t_from, drift = 0.0, boundary = 0.0;
    long steps = 0;
    for (int k = 0; k < p.snapshots; ++k) {
        const double tk = p.t_from + (p.t_to - p.t_from) * k / (p.snapshots - 1);
        auto res = full_propagate(std::move(s), c.potential, t_prev, tk, dt);
        s = std::move(res.state);
        steps += res.report.steps;
        drift = std::max(drift, std::abs(norm(s) - norm(s0)));
        boundary = std::max(boundary, boundary_mass(s));
        const Vec x = position_expectation(s), m = momentum_expectation(s);
        t.rows.push_back({fmt(tk), fmt(norm(s)), fmt(x[0]), fmt(x[1]), fmt(m[0]), fmt(m[1]), fmt(boundary_mass(s)), fmt(steps)});
        t_prev = tk;
    }
    const double span = std::abs(p.t_to - p.t_from);
    r.verdicts.push_back({"norm_drift", drift, 1e-8 * std::max(1.0, span), drift <= 1e-8 * std::max(1.0, span)});
    const double bm_limit = window_limit(WindowGuard{}, boundary_mass(s0));
    r.verdicts.push_back({"boundary_mass", boundary, bm_limit, boundary <= bm_limit});
    if (c.potential.empty()) {
        // Free dynamics has the exact factorised propagator; time stepping must reproduce it.
        const double err = distance(s, free_stark(s0, p.t_to - p.t_from));
        r.verdicts.push_back({"free_exact", err, p.exact_tolerance, err <= p.exact_tolerance});
    }
    const auto path = r.output_dir / "trajectory.csv";
    write_csv(path, t);
    r.artifacts.push_back(path);
}

inline void run_smatrix(const ExperimentConfig& c, RunResult& r) {
    const State phi0 = initial_packet(c);
    struct Job {
        double angle, speed;
        int j;
    };
    std::vector<Job> jobs;
    for (double a : c.schedule.angles_rad)
        for (double v : c.schedule.speeds)
            for (int j : c.schedule.axes) jobs.push_back({a, v, j});
    std::vector<FunctionalResult> rows(jobs.size());
    for (std::size_t i = 0; i < jobs.size(); ++i)
        rows[i] = commutator_functional(c.potential, jobs[i].speed * direction_at(jobs[i].angle), phi0, phi0, jobs[i].j,
                                        c.smatrix.kind, c.smatrix.policy);
    double defect = 0.0, largest = 0.0;
    for (const auto& f : rows) {
        defect = std::max(defect, f.unitarity_defect);
        largest = std::max(largest, std::abs(f.value));
    }
    r.verdicts.push_back({"unitarity_defect", defect, c.smatrix.unitarity_budget, defect <= c.smatrix.unitarity_budget});
    if (c.potential.empty())
        r.verdicts.push_back({"free_functional", largest, c.smatrix.zero_tolerance, largest <= c.smatrix.zero_tolerance});
    const auto path = r.output_dir / "scattering_diagnostics.csv";
    write_csv(path, diagnostics_table(rows));
    r.artifacts.push_back(path);
}

inline void run_reconstruct(const ExperimentConfig& c, RunResult& r) {
    const State packet = make_packet(make_grid(c.grid.dims, c.grid.points_per_axis, c.grid.box_half_width),
                                     c.packet.profile);
    ExperimentPlan plan;
    plan.angles = c.schedule.angles_rad;
    plan.offsets = c.schedule.offsets;
    plan.axes = c.schedule.axes;
    plan.speeds = c.schedule.speeds;
    plan.delta_max = c.schedule.delta_max;
    auto samples = c.reconstruct.source == SampleSource::rhs_direct ? synthesize_samples(c.potential, plan, packet)
                                                                     : collect_samples(c.potential, plan, packet);
    if (c.reconstruct.noise_relative > 0.0) {
        double rms = 0.0;
        for (const auto& s : samples) rms += std::norm(s.value) / samples.size();
        rms = std::sqrt(rms);
        std::mt19937_64 rng(c.seed);
        std::normal_distribution<double> noise(0.0, c.reconstruct.noise_relative * rms);
        for (auto& s : samples) s.value += cplx(noise(rng), noise(rng));
    }
    const auto inv = invert(samples, packet, c.reconstruct.grid, &c.potential);
    const double err = *inv.relative_error;
    r.verdicts.push_back({"relative_error", err, c.reconstruct.max_error, err <= c.reconstruct.max_error});
    r.verdicts.push_back({"curl_ratio", inv.curl_ratio, c.reconstruct.max_curl, inv.curl_ratio <= c.reconstruct.max_curl});
    const auto& g = c.reconstruct.grid;
    const auto truth = sample_raster(g.raster, g.half_width, [&](const Vec& x) { return c.potential.value(x); });
    write_csv(r.output_dir / "radon_samples.csv", samples_table(samples));
    write_raster(r.output_dir / "potential_estimate.txt", inv.potential, {{"field", "estimate"}});
    write_raster(r.output_dir / "potential_truth.txt", truth, {{"field", "truth"}});
    write_raster(r.output_dir / "gradient_1.txt", inv.grad1, {{"field", "d1V"}});
    write_raster(r.output_dir / "gradient_2.txt", inv.grad2, {{"field", "d2V"}});
    for (const char* f : {"radon_samples.csv", "potential_estimate.txt", "potential_truth.txt", "gradient_1.txt",
                          "gradient_2.txt"})
        r.artifacts.push_back(r.output_dir / f);
}

inline void run_ratecheck(const ExperimentConfig& c, RunResult& r) {
    const State phi0 = make_packet(make_grid(c.grid.dims, c.grid.points_per_axis, c.grid.box_half_width),
                                   c.packet.profile);
    const Vec vhat = direction_at(c.ratecheck.vhat_angle_rad);
    std::vector<RateFit> fits;
    for (const auto& id : c.ratecheck.targets) {
        fits.push_back(rate_sweep(find_target(id), c.potential, c.schedule.speeds, vhat, phi0, c.ratecheck.sweep));
        const auto& f = fits.back();
        if (find_target(id).growth)
            r.verdicts.push_back({f.target + "[" + f.gammas + "]", *std::max_element(f.values.begin(), f.values.end()),
                                  1.0, f.pass});
        else
            r.verdicts.push_back({f.target + "[" + f.gammas + "]", f.slope, f.predicted + c.ratecheck.sweep.margin, f.pass});
    }
    const auto rep = report(fits);
    r.summary = rep.summary;
    const auto path = r.output_dir / "rate_fits.csv";
    write_csv(path, rep.table);
    r.artifacts.push_back(path);
}

inline void run_exponents(const ExperimentConfig& c, RunResult& r) {
    const auto& e = c.exponents;
    CsvTable all;
    int skipped = 0;
    for (auto s : e.scenarios) {
        const bool uses_l = s == Scenario::long_range || s == Scenario::smooth_long;
        const bool uses_2 = s == Scenario::smooth_short || s == Scenario::smooth_long;
        if (uses_l && e.gamma_D.empty()) invalid("exponents.gamma_D", "required by scenario " + scenario_name(s));
        if (uses_2 && e.gamma2.empty()) invalid("exponents.gamma2", "required by scenario " + scenario_name(s));
        const std::vector<std::optional<double>> none{std::nullopt};
        auto opts = [&](const std::vector<double>& xs, bool used) {
            if (!used) return none;
            std::vector<std::optional<double>> out(xs.begin(), xs.end());
            return out;
        };
        std::vector<Gammas> grid;
        for (double g0 : e.gamma0)
            for (double g1 : e.gamma1)
                for (auto g2 : opts(e.gamma2, uses_2))
                    for (auto gd : opts(e.gamma_D, uses_l)) {
                        Gammas g{g0, g1, g2, gd};
                        try {
                            check_gamma_windows(g, s);
                            grid.push_back(g);
                        } catch (const LabError&) {
                            ++skipped;
                        }
                    }
        if (grid.empty()) invalid("exponents", "no gamma combination lies in the class windows of " + scenario_name(s));
        auto t = exponent_table(grid, {s}, e.tolerance);
        if (all.schema.empty()) all = t;
        else all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
    }
    all.meta["skipped"] = fmt(skipped);
    const int dev = all.column("deviation"), ver = all.column("verdict");
    double worst = 0.0;
    for (const auto& row : all.rows) worst = std::max(worst, std::stod(row[dev]));
    bool ok = true;
    for (const auto& row : all.rows) ok = ok && row[ver] == "PASS";
    r.verdicts.push_back({"closed_form_deviation", worst, e.tolerance, ok});
    const auto path = r.output_dir / "exponent_table.csv";
    write_csv(path, all);
    r.artifacts.push_back(path);
}

}  // namespace detail

// Resolves a relative output directory against STARKLAB_OUTPUT_ROOT (or the working
// directory when unset).
inline std::filesystem::path resolve_output(const std::filesystem::path& dir) {
    if (dir.is_absolute()) return dir;
    if (const char* root = std::getenv("STARKLAB_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / dir;
    return std::filesystem::current_path() / dir;
}

inline nlohmann::json manifest_json(const ExperimentConfig& c, const RunResult& r) {
    nlohmann::json m;
    m["tool"] = "starklab";
    m["version"] = kVersion;
    m["modules"] = {{"core-grid", kVersion},       {"potentials", kVersion},     {"propagators", kVersion},
                    {"scattering", kVersion},      {"reconstruction", kVersion}, {"exponent-calculus", kVersion},
                    {"ratelab", kVersion},         {"cli", kVersion}};
    m["kind"] = kind_name(c.kind);
    m["name"] = c.name;
    m["seed"] = c.seed;
    m["config_sha256"] = sha256_hex(c.text);
    m["jobs"] = worker_count();
    m["generated"] = utc_timestamp();
    m["verdicts"] = nlohmann::json::array();
    for (const auto& v : r.verdicts)
        m["verdicts"].push_back({{"check", v.check}, {"value", v.value}, {"threshold", v.threshold}, {"pass", v.pass}});
    m["all_pass"] = r.all_pass();
    m["artifacts"] = nlohmann::json::array();
    for (const auto& a : r.artifacts)
        m["artifacts"].push_back({{"file", a.filename().string()}, {"sha256", sha256_hex(file_bytes(a))}});
    return m;
}

// Runs one experiment and writes its artifacts, a verdicts table (for kinds whose
// checks are not already rows of their main table) and manifest.json.
inline RunResult run_experiment(const ExperimentConfig& c, const std::filesystem::path& output_dir) {
    RunResult r;
    r.output_dir = output_dir;
    std::filesystem::create_directories(output_dir);
    switch (c.kind) {
        case ExperimentKind::propagate: detail::run_propagate(c, r); break;
        case ExperimentKind::smatrix: detail::run_smatrix(c, r); break;
        case ExperimentKind::reconstruct: detail::run_reconstruct(c, r); break;
        case ExperimentKind::ratecheck: detail::run_ratecheck(c, r); break;
        case ExperimentKind::exponents: detail::run_exponents(c, r); break;
    }
    const bool own_table = c.kind == ExperimentKind::ratecheck || c.kind == ExperimentKind::exponents;
    if (!own_table) {
        const auto path = output_dir / "verdicts.csv";
        write_csv(path, detail::verdict_table(r.verdicts));
        r.artifacts.push_back(path);
    }
    if (r.summary.empty()) {
        std::ostringstream s;
        for (const auto& v : r.verdicts)
            s << fmt(v.pass) << ' ' << v.check << " = " << fmt(v.value) << " (threshold " << fmt(v.threshold) << ")\n";
        r.summary = s.str();
    }
    std::ofstream(output_dir / "manifest.json") << manifest_json(c, r).dump(2) << '\n';
    return r;
}

struct Summary {
    std::string text;
    int passed = 0;
    int total = 0;
    bool all_pass() const { return passed == total; }
};

// Aggregates every CSV row with a verdict column under dir; never recomputes anything.
inline Summary summarize(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) fail(ErrorCode::MissingArtifacts, dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<std::string> fails, passes;
    for (const auto& f : files) {
        const auto t = read_csv(f);
        const int v = t.column("verdict");
        if (v < 0) continue;
        for (const auto& row : t.rows) {
            if (static_cast<int>(row.size()) <= v) continue;
            std::string label = fs::relative(f, dir).string() + "  " + row[0];
            if (row.size() > 1 && v != 1) label += " " + row[1];
            (row[v] == "PASS" ? passes : fails).push_back(label);
        }
    }
    Summary s;
    s.passed = static_cast<int>(passes.size());
    s.total = static_cast<int>(passes.size() + fails.size());
    if (s.total == 0) fail(ErrorCode::MissingArtifacts, "no verdict tables under " + dir.string());
    std::ostringstream out;
    for (const auto& l : fails) out << "FAIL  " << l << '\n';
    for (const auto& l : passes) out << "PASS  " << l << '\n';
    out << s.passed << '/' << s.total << " PASS\n";
    s.text = out.str();
    return s;
}

}  // namespace starklab
