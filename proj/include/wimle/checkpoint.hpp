#pragma once

// Text checkpoints. Values use the shortest round-trip decimal form, so
// save/load reproduces every parameter bit for bit.
//
//   wimle-checkpoint 1
//   scalar <name> <value>
//   network <label>
//   arch <mlp|residual> <input> <width> <depth> <heads> [<name> <width>]...
//   param <name> <rows> <cols> <v>...
//   end

#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "wimle/errors.hpp"
#include "wimle/numkit.hpp"

namespace wimle {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    std::vector<std::pair<std::string, Network>> networks;
    std::map<std::string, Real> scalars;

    const Network& network(const std::string& label) const
    {
        for (const auto& [l, n] : networks)
            if (l == label) return n;
        throw ContractError("checkpoint: no network named '" + label + "'");
    }
};

namespace ckpt {

inline std::string format_real(Real v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline Real parse_real(const std::string& s)
{
    Real v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ContractError("checkpoint: bad number '" + s + "'");
    return v;
}

inline void write_network(std::ostream& os, const std::string& label, const Network& net)
{
    const auto& a = net.architecture();
    os << "network " << label << '\n';
    os << "arch " << (a.kind == Architecture::Kind::residual ? "residual" : "mlp") << ' ' << a.input << ' '
       << a.width << ' ' << a.depth << ' ' << a.heads.size();
    for (std::size_t h = 0; h < a.heads.size(); ++h) os << ' ' << a.head_names[h] << ' ' << a.heads[h];
    os << '\n';
    const auto& p = net.parameters();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Matrix& m = p[i];
        os << "param " << p.name(i) << ' ' << m.rows() << ' ' << m.cols();
        for (Index k = 0; k < m.size(); ++k) os << ' ' << format_real(m.data()[k]);
        os << '\n';
    }
    os << "end\n";
}

}  // namespace ckpt

inline void save_checkpoint(std::ostream& os, const Checkpoint& c)
{
    os << "wimle-checkpoint " << kCheckpointVersion << '\n';
    for (const auto& [name, v] : c.scalars) os << "scalar " << name << ' ' << ckpt::format_real(v) << '\n';
    for (const auto& [label, net] : c.networks) ckpt::write_network(os, label, net);
    if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline Checkpoint load_checkpoint(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line) || line != "wimle-checkpoint " + std::to_string(kCheckpointVersion))
        throw ContractError("checkpoint: missing or unsupported header");
    Checkpoint c;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "scalar") {
            std::string name, v;
            ls >> name >> v;
            c.scalars[name] = ckpt::parse_real(v);
        } else if (tag == "network") {
            std::string label;
            ls >> label;
            if (!std::getline(is, line)) throw ContractError("checkpoint: truncated network '" + label + "'");
            std::istringstream as(line);
            std::string atag, kind;
            std::size_t nheads = 0;
            Architecture arch;
            as >> atag >> kind >> arch.input >> arch.width >> arch.depth >> nheads;
            if (atag != "arch" || !as) throw ContractError("checkpoint: bad arch line for '" + label + "'");
            arch.kind = kind == "residual" ? Architecture::Kind::residual : Architecture::Kind::mlp;
            arch.heads.resize(nheads);
            arch.head_names.resize(nheads);
            for (std::size_t h = 0; h < nheads; ++h) as >> arch.head_names[h] >> arch.heads[h];
            if (!as) throw ContractError("checkpoint: bad head list for '" + label + "'");
            Rng dummy(0);
            Network net(arch, dummy);
            auto& params = net.parameters();
            std::size_t next = 0;
            while (std::getline(is, line) && line != "end") {
                std::istringstream ps(line);
                std::string ptag, pname;
                Index rows = 0, cols = 0;
                ps >> ptag >> pname >> rows >> cols;
                if (ptag != "param" || next >= params.size() || params.name(next) != pname)
                    throw ContractError("checkpoint: unexpected parameter '" + pname + "' in '" + label + "'");
                auto dst = params.value(next);
                if (dst.rows() != rows || dst.cols() != cols)
                    throw DimensionError("checkpoint: shape mismatch for '" + pname + "'");
                std::string tok;
                for (Index k = 0; k < rows * cols; ++k) {
                    if (!(ps >> tok)) throw ContractError("checkpoint: truncated values for '" + pname + "'");
                    dst.data()[k] = ckpt::parse_real(tok);
                }
                ++next;
            }
            if (next != params.size()) throw ContractError("checkpoint: missing parameters in '" + label + "'");
            c.networks.emplace_back(label, std::move(net));
        } else {
            throw ContractError("checkpoint: unknown record '" + tag + "'");
        }
    }
    return c;
}

}  // namespace wimle
