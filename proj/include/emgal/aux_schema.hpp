#pragma once

#include <map>
#include <string>
#include <vector>

#include "emgal/types.hpp"

namespace emgal {

/// Auxiliary background-variable states attached to a record,
/// variable name -> state string.
using AuxStates = std::map<std::string, std::string>;

/// Declares the admissible auxiliary variables and their discrete states.
/// Continuous variables must be binned into states by the caller before they
/// enter the engine.
struct AuxSchema {
    std::map<std::string, std::vector<std::string>> variables;

    bool has_variable(const std::string& name) const { return variables.count(name) > 0; }

    void validate() const {
        for (const auto& [name, states] : variables) {
            if (states.empty())
                fail(Errc::invalid_config, "aux variable \"" + name + "\" declares no states");
            for (std::size_t i = 0; i < states.size(); ++i)
                for (std::size_t j = i + 1; j < states.size(); ++j)
                    if (states[i] == states[j])
                        fail(Errc::invalid_config,
                             "aux variable \"" + name + "\" lists duplicate state \"" + states[i] +
                                 "\"");
        }
    }

    bool operator==(const AuxSchema&) const = default;
};

}  // namespace emgal
