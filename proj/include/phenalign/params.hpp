#pragma once

#include <cstdlib>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "phenalign/error.hpp"
#include "phenalign/serialize.hpp"
#include "phenalign/tensor.hpp"

namespace phenalign {

// Named tensor collection, sorted by name. The sorted order is the
// canonical order for serialization and for walking parameters during
// optimization, which keeps every consumer deterministic.
class ParameterStore {
public:
    void add(const std::string& name, Tensor t) {
        if (params_.count(name))
            throw ContractError("parameter store: duplicate name " + name);
        params_.emplace(name, std::move(t));
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    Tensor& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end())
            throw LookupError("parameter store: unknown name " + name);
        return it->second;
    }

    const Tensor& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end())
            throw LookupError("parameter store: unknown name " + name);
        return it->second;
    }

    std::size_t size() const { return params_.size(); }

    std::size_t total_entries() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.size();
        return n;
    }

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }

    bool same_layout(const ParameterStore& o) const {
        if (params_.size() != o.params_.size()) return false;
        auto a = params_.begin();
        auto b = o.params_.begin();
        for (; a != params_.end(); ++a, ++b)
            if (a->first != b->first || !a->second.same_shape(b->second)) return false;
        return true;
    }

    // Text form, one tensor per pair of lines:
    //   tensor <name> <d0>x<d1>...     (bare "tensor <name> -" for scalars)
    //   <values space-separated, 17 significant digits>
    std::string serialize() const {
        std::string out;
        for (const auto& [name, t] : params_) {
            out += "tensor " + name + " ";
            out += t.shape().empty() ? "-" : shape_dims(t.shape());
            out += '\n';
            for (std::size_t i = 0; i < t.size(); ++i) {
                if (i) out += ' ';
                out += format_double(t[i]);
            }
            out += '\n';
        }
        return out;
    }

    static ParameterStore deserialize(const std::vector<std::string>& lines,
                                      std::size_t& pos, std::size_t count,
                                      const std::string& context) {
        ParameterStore store;
        for (std::size_t k = 0; k < count; ++k) {
            if (pos >= lines.size())
                throw ParseError(context + ": truncated tensor block");
            const std::string& head = lines[pos];
            std::vector<std::string> parts = split(head, ' ');
            if (parts.size() != 3 || parts[0] != "tensor")
                throw ParseError(context + ": line " + std::to_string(pos + 1) +
                                 ": expected 'tensor <name> <shape>'");
            Shape shape;
            if (parts[2] != "-")
                for (const std::string& d : split(parts[2], 'x'))
                    shape.push_back(static_cast<std::size_t>(
                        std::strtoull(d.c_str(), nullptr, 10)));
            if (pos + 1 >= lines.size())
                throw ParseError(context + ": missing values for " + parts[1]);
            std::vector<std::string> fields = split(lines[pos + 1], ' ');
            std::vector<double> values;
            values.reserve(fields.size());
            for (const std::string& f : fields)
                values.push_back(parse_double(f, context + ": " + parts[1]));
            if (values.size() != shape_numel(shape))
                throw ParseError(context + ": " + parts[1] + ": got " +
                                 std::to_string(values.size()) + " values for shape " +
                                 shape_str(shape));
            store.add(parts[1], Tensor(std::move(shape), std::move(values)));
            pos += 2;
        }
        return store;
    }

private:
    static std::string shape_dims(const Shape& s) {
        std::string out;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out += 'x';
            out += std::to_string(s[i]);
        }
        return out;
    }

    std::map<std::string, Tensor> params_;
};

}  // namespace phenalign
