#pragma once

#include "deca/cs_recovery.hpp"
#include "deca/diffusion_wavelets.hpp"
#include "deca/errors.hpp"
#include "deca/experiments.hpp"
#include "deca/field.hpp"
#include "deca/linalg.hpp"
#include "deca/matrix_completion.hpp"
#include "deca/network.hpp"
#include "deca/routing.hpp"
