#pragma once

#include <stdexcept>
#include <string>

namespace cfmkit {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// --- SMILES / molecule errors ---
class UnsupportedToken : public Error {
public:
  explicit UnsupportedToken(const std::string& what) : Error("UnsupportedToken: " + what) {}
};
class UnclosedRingBond : public Error {
public:
  explicit UnclosedRingBond(const std::string& what) : Error("UnclosedRingBond: " + what) {}
};
class UnbalancedParenthesis : public Error {
public:
  explicit UnbalancedParenthesis(const std::string& what)
      : Error("UnbalancedParenthesis: " + what) {}
};
class ValenceViolation : public Error {
public:
  explicit ValenceViolation(const std::string& what) : Error("ValenceViolation: " + what) {}
};
class MultipleCharges : public Error {
public:
  explicit MultipleCharges(const std::string& what) : Error("MultipleCharges: " + what) {}
};
class UnknownElementMass : public Error {
public:
  explicit UnknownElementMass(const std::string& what) : Error("UnknownElementMass: " + what) {}
};

// --- fragmentation graph errors ---
class GraphTooLarge : public Error {
public:
  explicit GraphTooLarge(const std::string& what) : Error("GraphTooLarge: " + what) {}
};
class NoProtonationSite : public Error {
public:
  explicit NoProtonationSite(const std::string& what) : Error("NoProtonationSite: " + what) {}
};

// --- model / persistence errors ---
class LayoutMismatch : public Error {
public:
  explicit LayoutMismatch(const std::string& what) : Error("LayoutMismatch: " + what) {}
};
class VersionMismatch : public Error {
public:
  explicit VersionMismatch(const std::string& what) : Error("VersionMismatch: " + what) {}
};
class CorruptFile : public Error {
public:
  explicit CorruptFile(const std::string& what) : Error("CorruptFile: " + what) {}
};
class IoError : public Error {
public:
  explicit IoError(const std::string& what) : Error("Io: " + what) {}
};

// --- training / prediction errors ---
class NoTrainingData : public Error {
public:
  explicit NoTrainingData(const std::string& what) : Error("NoTrainingData: " + what) {}
};
class NonConvergence : public Error {
public:
  explicit NonConvergence(const std::string& what) : Error("NonConvergence: " + what) {}
};
class EmptySpectrum : public Error {
public:
  explicit EmptySpectrum(const std::string& what) : Error("EmptySpectrum: " + what) {}
};
class MalformedLine : public Error {
public:
  explicit MalformedLine(const std::string& what) : Error("MalformedLine: " + what) {}
};
class MissingEnergyBlock : public Error {
public:
  explicit MissingEnergyBlock(const std::string& what) : Error("MissingEnergyBlock: " + what) {}
};
class UnknownCorrectId : public Error {
public:
  explicit UnknownCorrectId(const std::string& what) : Error("UnknownCorrectId: " + what) {}
};

}  // namespace cfmkit
