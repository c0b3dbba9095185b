from lab.errors import InvalidInputError


def to_label_id(value: int | str) -> int:
    """
    Try to convert a given value to a 0-based class id

    :param value: Class id as an int or in string form
    :return: Converted class id
    """
    try:
        label = int(value)
    except (TypeError, ValueError):
        raise InvalidInputError(f"{value} is not a recognized class id")
    if label < 0:
        raise InvalidInputError(f"Class ids are 0-based, got {label}")
    return label
