#pragma once

#include <stdexcept>
#include <string>

namespace eaid {

// Invalid cluster/coding/scenario parameters (violated invariants).
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller handed an operation input it must never pass (e.g. empty message).
struct invalid_input : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Fewer than data_shards distinct fragment indices available for a decode.
struct insufficient_fragments : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fragments that cannot belong to one well-formed message (mixed ids,
// inconsistent lengths, out-of-range indices).
struct corruption_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A message that a correct peer can never send (defensive checks).
struct protocol_violation : std::logic_error {
    using std::logic_error::logic_error;
};

// Disperse invoked for a message id that is already in flight.
struct duplicate_dispersal : std::logic_error {
    using std::logic_error::logic_error;
};

// Scenario file rejected; carries 1-based line/column of the offending token.
struct parse_error : std::runtime_error {
    int line;
    int column;
    parse_error(const std::string& what, int line_, int column_)
        : std::runtime_error(what), line(line_), column(column_) {}
};

}  // namespace eaid
