"""The main entry point for msp."""

if __name__ == "__main__":
    from msp_pretrain import mspapp as app

    app.launch_new_instance()
